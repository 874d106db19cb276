import numpy as np
import pytest
from hypothesis import given, strategies as st

from proxbridge.core import policy_table, uniform_policy_contrast
from proxbridge.errors import BridgeExistenceError
from proxbridge.features import IndicatorFeatures
from proxbridge.gace import estimate_ipw, estimate_reg
from proxbridge.synthetic import (
    DiscreteDGP,
    LinearSEMDGP,
    as_table,
    bundled_dgp,
    completeness_rank_check,
    default_linear_sem,
    dgp_from_dict,
    generate_discrete,
    generate_linear_sem,
    linear_sem_theta_family,
    observed_level_residuals,
    oracle_conditional_residual,
    oracle_discrete_bridge_sets,
    oracle_discrete_J,
    oracle_linear_sem_bridges,
    oracle_linear_sem_J,
    random_discrete_dgp,
    spawn_seed,
    table_bridge,
    u_level_forms,
    u_level_residuals,
)


def test_bundled_truths():
    assert oracle_discrete_J(bundled_dgp("unique")) == pytest.approx(1.25, abs=1e-12)
    assert oracle_discrete_J(bundled_dgp("identity")) == pytest.approx(1.25, abs=1e-12)
    assert oracle_discrete_J(bundled_dgp("nonunique")) == pytest.approx(1.035, abs=1e-12)
    assert oracle_discrete_J(bundled_dgp("behavior_policy")) == pytest.approx(1.865, abs=1e-12)
    with pytest.raises(KeyError):
        bundled_dgp("nope")


def test_table_validation():
    d = bundled_dgp("unique").to_dict()
    bad = dict(d, p_u=[[0.5, 0.6]])
    with pytest.raises(ValueError):
        DiscreteDGP.from_dict(bad)
    zero = dict(d, f_a=[[[1.0, 0.0], [0.4, 0.6]]])
    with pytest.raises(ValueError):
        DiscreteDGP.from_dict(zero)


def test_dgp_roundtrip_and_digest():
    for name in ("unique", "nonunique"):
        d = bundled_dgp(name)
        back = dgp_from_dict(d.to_dict())
        assert back.digest() == d.digest()
    sem = default_linear_sem()
    assert dgp_from_dict(sem.to_dict()).digest() == sem.digest()


def test_generate_empty_and_deterministic():
    d = bundled_dgp("nonunique")
    e = generate_discrete(d, 0, 1)
    assert (e.n, e.p_w, e.p_z, e.d_x) == (0, 1, 1, 1)
    a, b = generate_discrete(d, 500, 7), generate_discrete(d, 500, 7)
    for k in ("y", "w", "z", "a", "x"):
        assert np.array_equal(getattr(a, k), getattr(b, k))
    s1, s2 = generate_linear_sem(default_linear_sem(), 300, 5), generate_linear_sem(default_linear_sem(), 300, 5)
    assert np.array_equal(s1.y, s2.y) and np.array_equal(s1.w, s2.w)


def test_identity_proxies_copy_u():
    data, u = generate_discrete(bundled_dgp("identity"), 2000, 0, return_confounders=True)
    assert np.array_equal(data.w[:, 0], u)
    assert np.array_equal(data.z[:, 0], u)


def test_action_marginal_within_multinomial_bands():
    d = random_discrete_dgp(3, n_a=3, contrast="policy")
    data = generate_discrete(d, 100_000, 11)
    exact = d.p_xua.sum(axis=(0, 1))
    freq = np.bincount(data.a, minlength=3) / data.n
    band = 3 * np.sqrt(exact * (1 - exact) / data.n)
    assert np.all(np.abs(freq - exact) <= band)


def test_spawn_seed_distinct_streams():
    seen = {tuple(spawn_seed(0, i, r).generate_state(2)) for i in range(4) for r in range(50)}
    assert len(seen) == 200


def test_oracle_J_trivial_cases():
    d = random_discrete_dgp(1)
    dd = d.to_dict()
    dd["y_mean"] = np.full_like(np.asarray(dd["y_mean"]), 2.0).tolist()
    const = DiscreteDGP.from_dict(dd)
    assert oracle_discrete_J(const, policy_table([[0.3, 0.7]])) == pytest.approx(2.0, abs=1e-14)
    # pi is the (u-free) propensity: J = c * sum over a of pi
    assert oracle_discrete_J(const, policy_table([[0.5, 0.5]])) == pytest.approx(2.0, abs=1e-14)


@given(st.integers(0, 10_000))
def test_u_level_forms_agree(seed):
    d = random_discrete_dgp(seed)
    ipw, reg, dr = u_level_forms(d)
    assert ipw == pytest.approx(reg, abs=1e-12)
    assert dr == pytest.approx(oracle_discrete_J(d), abs=1e-12)


def test_identity_bridge_is_regression():
    d = bundled_dgp("identity")
    sets = oracle_discrete_bridge_sets(d)
    assert sets.h.unique and sets.q.unique
    # h0(w, a, x) = E[Y | U = w, a, x]
    assert np.allclose(sets.h.particular[:, :, 0], d.y_mean[0])


def test_nonunique_null_dimensions():
    d = bundled_dgp("nonunique")
    sets = oracle_discrete_bridge_sets(d)
    cells = d.n_a * d.n_x
    assert sets.h.null_dim == cells and sets.q.null_dim == cells


@given(st.integers(0, 10_000), st.integers(2, 3), st.integers(2, 3))
def test_bridge_sets_solve_both_levels(seed, nw, nz):
    d = random_discrete_dgp(seed, n_w=nw, n_z=nz)
    sets = oracle_discrete_bridge_sets(d)
    rng = np.random.default_rng(seed)
    h = sets.h.member(rng.normal(size=sets.h.null_dim))
    q = sets.q.member(rng.normal(size=sets.q.null_dim))
    assert max(u_level_residuals(d, h, q).values()) <= 1e-10
    assert max(observed_level_residuals(d, h, q).values()) <= 1e-10
    assert oracle_conditional_residual(d, h, "h") <= 1e-10
    assert oracle_conditional_residual(d, q, "q") <= 1e-10


def test_rank_deficient_proxy_raises():
    d = bundled_dgp("unique").to_dict()
    d["p_w"] = [[[0.5, 0.5], [0.5, 0.5]]]
    with pytest.raises(BridgeExistenceError, match="bridge existence"):
        oracle_discrete_bridge_sets(DiscreteDGP.from_dict(d))


def test_residual_linear_in_perturbation():
    d = bundled_dgp("unique")
    h0 = oracle_discrete_bridge_sets(d).h.particular
    v = np.zeros_like(h0)
    v[0, 0, 0] = 1.0
    r = [oracle_conditional_residual(d, h0 + e * v, "h") for e in (0.01, 0.02, 0.04)]
    assert r[0] > 0
    assert r[1] == pytest.approx(2 * r[0], rel=1e-9) and r[2] == pytest.approx(4 * r[0], rel=1e-9)


def test_table_bridge_roundtrip():
    d = bundled_dgp("nonunique")
    t = np.random.default_rng(0).normal(size=(d.n_w, d.n_a, d.n_x))
    assert np.allclose(as_table(d, table_bridge(d, t, "h"), "h"), t)


def test_completeness_report():
    u = completeness_rank_check(bundled_dgp("unique"))
    assert u.bridges_exist and u.unique_h and u.unique_q and u.observed_completeness_1
    nu = completeness_rank_check(bundled_dgp("nonunique"))
    assert not nu.unique_h and not nu.cardinality_allows_1 and not nu.observed_completeness_1
    r = completeness_rank_check(random_discrete_dgp(4, n_w=3, n_z=3))
    assert r.max_product_discrepancy <= 1e-12
    assert r.rank_w_given_z == r.rank_w_given_z_product


def test_discrete_J_matches_u_observed_dr_monte_carlo():
    d = bundled_dgp("nonunique")
    data, u = generate_discrete(d, 100_000, 2, return_confounders=True)
    xi = data.x[:, 0].astype(int)
    pi = np.array([-1.0, 1.0])
    k0 = d.y_mean[xi, u]
    f = d.f_a[xi, u, data.a]
    phi = pi[data.a] / f * (data.y - k0[np.arange(data.n), data.a]) + k0 @ pi
    se = phi.std() / np.sqrt(data.n)
    assert abs(phi.mean() - oracle_discrete_J(d)) <= 4 * se


# -- linear structural model -----------------------------------------------------------


def test_linear_sem_validation():
    d = default_linear_sem().to_dict()
    with pytest.raises(ValueError):
        LinearSEMDGP.from_dict(dict(d, alpha_w=[[0.0], [0.0]]))
    with pytest.raises(ValueError):
        LinearSEMDGP.from_dict(dict(d, a_hi_u=[-2.0]))


def test_linear_sem_noiseless_outcome():
    d = dict(default_linear_sem().to_dict(), var_y=0.0, var_z=0.0, var_w=0.0, u_low=0.0, u_high=0.0,
             x_low=0.0, x_high=0.0, alpha_y=[0.0], gamma_y=0.0, a_lo_u=[0.0], a_hi_u=[0.0], a_lo_x=[0.0],
             a_hi_x=[0.0])
    sem = LinearSEMDGP.from_dict(d)
    data = generate_linear_sem(sem, 50, 0)
    assert np.allclose(data.y, data.w @ sem.omega_y)


def test_linear_sem_covariance():
    d = default_linear_sem().to_dict()
    d.update(beta_z=[[0.0], [0.0]], gamma_z=[0.0, 0.0])
    sem = LinearSEMDGP.from_dict(d)
    data = generate_linear_sem(sem, 200_000, 3)
    var_u = (sem.u_high - sem.u_low) ** 2 / 12
    expected = sem.alpha_z @ sem.alpha_w.T * var_u
    emp = np.cov(data.z.T, data.w.T)[:2, 2:]
    assert np.allclose(emp, expected, atol=0.01)


def test_theta_family_and_unique_case():
    sem = default_linear_sem()
    fam = linear_sem_theta_family(sem)
    assert fam["theta_w"][1].shape == (2, 1)
    d = sem.to_dict()
    d.update(alpha_w=[[2.0]], beta_w=[[0.3]], omega_y=[0.0], alpha_z=[[1.0]], beta_z=[[0.0]], gamma_z=[0.2])
    sq = LinearSEMDGP.from_dict(d)
    tw = linear_sem_theta_family(sq)["theta_w"]
    assert tw[1].shape[1] == 0 and np.allclose(tw[0], [0.5])
    with pytest.raises(BridgeExistenceError):
        oracle_linear_sem_bridges(sem, theta_w=[1.0, 1.0])


def test_linear_sem_pure_proxy_bridge():
    d = default_linear_sem().to_dict()
    d.update(omega_y=[0.0, 0.0], beta_y=[0.0], gamma_y=0.0, beta_w=[[0.0], [0.0]])
    sem = LinearSEMDGP.from_dict(d)
    h, _ = oracle_linear_sem_bridges(sem)
    w = np.random.default_rng(0).normal(size=(5, 2))
    tw = linear_sem_theta_family(sem)["theta_w"][0]
    assert np.allclose(h(w, np.zeros(5), np.zeros((5, 1))), w @ tw)


def test_linear_sem_two_bridges_same_u_regression():
    sem = default_linear_sem()
    fam = linear_sem_theta_family(sem)
    t0, basis = fam["theta_w"]
    h1, _ = oracle_linear_sem_bridges(sem)
    h2, _ = oracle_linear_sem_bridges(sem, theta_w=t0 + 1.5 * basis[:, 0])
    data, u = generate_linear_sem(sem, 100_000, 9, return_confounders=True)
    d1, d2 = h1.on(data), h2.on(data)
    assert np.abs(d1 - d2).max() > 0.1
    # regress the difference on (1, U, A, X): all coefficients ~ 0
    design = np.column_stack([np.ones(data.n), u, data.a, data.x])
    coef, *_ = np.linalg.lstsq(design, d1 - d2, rcond=None)
    resid = (d1 - d2) - design @ coef
    se = np.sqrt(np.diag(np.linalg.inv(design.T @ design)) * resid.var())
    assert np.all(np.abs(coef) <= 4 * se)


def test_linear_sem_reg_ipw_match_J():
    sem = default_linear_sem()
    con = uniform_policy_contrast(0.0, 1.0, 6)
    J, J_se = oracle_linear_sem_J(sem, con, n=400_000)
    data = generate_linear_sem(sem, 100_000, 21)
    fam = linear_sem_theta_family(sem)
    for shift in (0.0, 1.0):
        tw = fam["theta_w"][0] + shift * fam["theta_w"][1][:, 0]
        tz = fam["theta_z"][0] + shift * fam["theta_z"][1][:, 0]
        h, q = oracle_linear_sem_bridges(sem, tw, tz)
        for rep in (estimate_reg(h, data, con), estimate_ipw(q, data, con)):
            assert abs(rep.estimate - J) <= 4 * np.hypot(rep.se, J_se)


def _moment_ok(resid, instruments):
    for g in instruments.T:
        m = resid * g
        assert abs(m.mean()) <= 4 * m.std() / np.sqrt(m.shape[0])


def test_linear_sem_bridges_satisfy_moments():
    sem = default_linear_sem()
    fam = linear_sem_theta_family(sem)
    data, u = generate_linear_sem(sem, 100_000, 13, return_confounders=True)
    f = sem.action_density(data.a, u, data.x)
    for shift in (0.0, -2.0):
        h, q = oracle_linear_sem_bridges(sem, fam["theta_w"][0] + shift * fam["theta_w"][1][:, 0],
                                         fam["theta_z"][0] + shift * fam["theta_z"][1][:, 0])
        g_z = np.column_stack([np.ones(data.n), data.z, data.a, data.x, data.z[:, 0] * data.a])
        _moment_ok(data.y - h.on(data), g_z)
        g_w = np.column_stack([np.ones(data.n), data.w, data.a, data.x, data.w[:, 1] * data.x[:, 0]])
        _moment_ok(q.on(data) - 1.0 / f, g_w)
