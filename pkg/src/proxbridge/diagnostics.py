"""Verification instruments: ill-posedness, identity checks, replication studies."""

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, stats

from . import linalg
from .gace import estimate
from .synthetic import (
    DiscreteDGP,
    LinearSEMDGP,
    as_table,
    generate_discrete,
    generate_linear_sem,
    ipw_bias_identity,
    observed_level_residuals,
    oracle_conditional_residual,
    oracle_discrete_bridge_sets,
    oracle_discrete_J,
    oracle_linear_sem_J,
    population_dr,
    population_ipw,
    population_reg,
    reg_bias_identity,
    spawn_seed,
    u_level_forms,
    u_level_residuals,
    _pi_table,
)

logger = logging.getLogger(__name__)

IDENTITY_TOL = 1e-9


# --------------------------------------------------------------------------
# ill-posedness on finite supports


@dataclass(frozen=True)
class IllPosedness:
    """tau value; ``infinite`` is an explicit flag and ``value`` is then None."""

    kind: str
    bridge: str
    value: float = None
    infinite: bool = False

    def __float__(self):
        return float("inf") if self.infinite else float(self.value)

    def to_dict(self):
        return {"kind": self.kind, "bridge": self.bridge, "value": self.value, "infinite": self.infinite}


def _grid_features(dgp, features, levels):
    """features at every (proxy, a, x) cell, shaped (proxy, a, x, d)."""
    pr, aa, xx = np.meshgrid(np.arange(levels), np.arange(dgp.n_a), np.arange(dgp.n_x), indexing="ij")
    f = features(pr.reshape(-1, 1).astype(float), aa.ravel(), xx.reshape(-1, 1).astype(float))
    return f.reshape(levels, dgp.n_a, dgp.n_x, -1)


def ill_posedness_operators(dgp, hypothesis, kind, bridge, contrast=None):
    """(L1, L2) with ||L1 c|| the numerator and ||L2 c|| the denominator norm of direction ``c``."""
    if kind not in ("tau1", "tau2"):
        raise ValueError("kind must be 'tau1' or 'tau2'")
    p_xua = dgp.p_xua
    if bridge == "h":
        f = _grid_features(dgp, hypothesis, dgp.n_w)  # (w, a, x, d)
        p_xuaz = dgp.p_xuaz
        p_zax = p_xuaz.sum(axis=1)  # (x, a, z)
        # E[delta | z, a, x] = sum_u p(u | z, a, x) sum_w p(w | u, x) delta(w, a, x)
        e_u = np.einsum("xuw,waxd->xuad", dgp.p_w, f)  # E[delta | u, a, x]
        num = np.einsum("xuaz,xuad->xazd", p_xuaz, e_u)
        with np.errstate(invalid="ignore", divide="ignore"):
            e_z = np.where(p_zax[..., None] > 0, num / p_zax[..., None], 0.0)
        l2 = (np.sqrt(p_zax)[..., None] * e_z).reshape(-1, f.shape[-1])
        if kind == "tau1":
            l1 = (np.sqrt(p_xua)[..., None] * e_u).reshape(-1, f.shape[-1])
        else:
            p_wax = np.einsum("xua,xuw->wax", p_xua, dgp.p_w)
            l1 = (np.sqrt(p_wax)[..., None] * f).reshape(-1, f.shape[-1])
        return l1, l2
    if bridge == "q":
        pi = _pi_table(dgp, contrast)  # (x, a)
        f = _grid_features(dgp, hypothesis, dgp.n_z)  # (z, a, x, d)
        pf = f * pi.T[None, :, :, None]
        e_u = np.einsum("xuaz,zaxd->xuad", dgp.p_z, pf)  # E[pi delta | u, a, x]
        p_wax = np.einsum("xua,xuw->xaw", p_xua, dgp.p_w)
        num = np.einsum("xua,xuw,xuad->xawd", p_xua, dgp.p_w, e_u)
        with np.errstate(invalid="ignore", divide="ignore"):
            e_w = np.where(p_wax[..., None] > 0, num / p_wax[..., None], 0.0)
        l2 = (np.sqrt(p_wax)[..., None] * e_w).reshape(-1, f.shape[-1])
        if kind == "tau1":
            l1 = (np.sqrt(p_xua)[..., None] * e_u).reshape(-1, f.shape[-1])
        else:
            p_zax = np.einsum("xuaz->zax", dgp.p_xuaz)
            l1 = (np.sqrt(p_zax)[..., None] * pf).reshape(-1, f.shape[-1])
        return l1, l2
    raise ValueError("bridge must be 'h' or 'q'")


def ill_posedness_discrete(dgp, hypothesis, kind="tau1", bridge="h", contrast=None, rtol=1e-8):
    """sup over directions c of ||L1 c|| / ||L2 c||, with 0/0 = 0.

    Infinite when L1 is nonzero somewhere on the null space of L2;
    otherwise the largest singular value of ``L1 pinv(L2)``.
    """
    l1, l2 = ill_posedness_operators(dgp, hypothesis, kind, bridge, contrast)
    scale = max(np.linalg.norm(l1, 2), 1e-300)
    null = linalg.null_space(l2, rtol)
    if null.shape[1] and np.linalg.norm(l1 @ null, 2) > rtol * scale:
        return IllPosedness(kind, bridge, None, True)
    ratio = l1 @ linalg.pinv(l2, rtol)
    value = float(np.linalg.norm(ratio, 2)) if ratio.size else 0.0
    return IllPosedness(kind, bridge, value, False)


def _polish_ratio(l1, l2, c0):
    """Local ascent of |L1 c| / |L2 c| from ``c0`` (BFGS on the log of the squared ratio).

    A generalized Rayleigh quotient has no local maxima other than the global
    one, so ascent from a good random start reaches the supremum.
    """
    a, b = l1.T @ l1, l2.T @ l2

    def fun(c):
        num, den = c @ a @ c, c @ b @ c
        if not (num > 0 and den > 0):
            return 0.0, np.zeros_like(c)
        return float(np.log(den) - np.log(num)), 2.0 * (b @ c / den - a @ c / num)

    res = optimize.minimize(fun, c0 / np.linalg.norm(c0), jac=True, method="BFGS",
                            options={"gtol": 1e-12, "maxiter": 2000})
    c = res.x
    den = np.linalg.norm(l2 @ c)
    return float(np.linalg.norm(l1 @ c) / den) if den > 0 else 0.0


def ill_posedness_random_search(dgp, hypothesis, kind="tau1", bridge="h", contrast=None, draws=100_000, seed=0,
                                polish=5):
    """Max of the ratio over Gaussian random directions, then local ascent from the ``polish`` best.

    Every candidate is an actual direction, so the result is a lower bound on tau
    reached without any pseudoinverse or singular value computation.
    """
    l1, l2 = ill_posedness_operators(dgp, hypothesis, kind, bridge, contrast)
    rng = np.random.default_rng(seed)
    best = 0.0
    starts = []
    for start in range(0, draws, 20_000):
        c = rng.standard_normal((l1.shape[1], min(20_000, draws - start)))
        num = np.linalg.norm(l1 @ c, axis=0)
        den = np.linalg.norm(l2 @ c, axis=0)
        ok = den > 0
        if np.any(num[~ok] > 0):
            return float("inf")
        if np.any(ok):
            ratio = np.where(ok, num / np.where(ok, den, 1.0), 0.0)
            top = np.argsort(ratio)[-polish:] if polish else []
            starts += [(ratio[i], c[:, i]) for i in top]
            best = max(best, float(ratio.max()))
    starts.sort(key=lambda t: t[0])
    for _, c0 in starts[-polish:] if polish else []:
        best = max(best, _polish_ratio(l1, l2, c0))
    return best


# --------------------------------------------------------------------------
# identification identities by enumeration


@dataclass(frozen=True)
class IdentityReport:
    violations: dict
    tol: float = IDENTITY_TOL

    @property
    def max_violation(self):
        return max(self.violations.values()) if self.violations else 0.0

    @property
    def passed(self):
        return self.max_violation <= self.tol

    def to_dict(self):
        return {"violations": self.violations, "max_violation": self.max_violation, "passed": self.passed}


def check_identification_identities(dgp, trials=20, seed=0, contrast=None):
    """Max violation of each identity over random bridge-set members and random h, q."""
    rng = np.random.default_rng(seed)
    J = oracle_discrete_J(dgp, contrast)
    sets = oracle_discrete_bridge_sets(dgp)
    v = {k: 0.0 for k in (
        "u_level_forms", "bridge_u_level", "bridge_observed_level",
        "reg_identification", "ipw_identification", "dr_with_oracle_h", "dr_with_oracle_q",
        "reg_bias_identity", "ipw_bias_identity",
    )}

    def bump(key, value):
        v[key] = max(v[key], float(abs(value)))

    for form in u_level_forms(dgp, contrast):
        bump("u_level_forms", form - J)
    for _ in range(max(int(trials), 1)):
        h0 = sets.h.member(rng.standard_normal(sets.h.null_dim))
        q0 = sets.q.member(rng.standard_normal(sets.q.null_dim))
        h_any = rng.standard_normal(h0.shape)
        q_any = rng.standard_normal(q0.shape)
        for res in u_level_residuals(dgp, h0, q0).values():
            bump("bridge_u_level", res)
        for res in observed_level_residuals(dgp, h0, q0).values():
            bump("bridge_observed_level", res)
        bump("reg_identification", population_reg(dgp, h0, contrast) - J)
        bump("ipw_identification", population_ipw(dgp, q0, contrast) - J)
        bump("dr_with_oracle_h", population_dr(dgp, h0, q_any, contrast) - J)
        bump("dr_with_oracle_q", population_dr(dgp, h_any, q0, contrast) - J)
        lhs, rhs = reg_bias_identity(dgp, h_any, q0, contrast)
        bump("reg_bias_identity", lhs - rhs)
        lhs, rhs = ipw_bias_identity(dgp, q_any, h0, contrast)
        bump("ipw_bias_identity", lhs - rhs)
    return IdentityReport(v)


# --------------------------------------------------------------------------
# replication studies


@dataclass(frozen=True)
class EstimatorSpec:
    """A nuisance specification plus the estimator applied to it."""

    nuisance: object
    estimator: str = "dr-crossfit"
    folds: int = 2

    def to_dict(self):
        return {"estimator": self.estimator, "folds": self.folds, "nuisance": self.nuisance.to_dict()}


@dataclass(frozen=True, eq=False)
class ReplicationStudy:
    """Replications of several estimators on common data.

    Replication ``r`` at size index ``i`` uses the data stream
    ``spawn_seed(seed, i, r)``, shared by every estimator.
    """

    dgp: object
    estimators: dict
    sizes: tuple
    reps: int
    seed: int = 0
    contrast: object = None
    alpha: float = 0.05
    jobs: int = 1
    oracle_J: float = None
    results: list = field(default_factory=list)

    def __post_init__(self):
        if int(self.reps) < 1:
            raise ValueError("reps must be >= 1")
        if not self.sizes:
            raise ValueError("at least one sample size is required")
        object.__setattr__(self, "sizes", tuple(int(n) for n in self.sizes))
        if self.contrast is None:
            if not isinstance(self.dgp, DiscreteDGP):
                raise ValueError("a contrast is required for this DGP")
            object.__setattr__(self, "contrast", self.dgp.contrast())

    def truth(self):
        if self.oracle_J is not None:
            return float(self.oracle_J)
        if isinstance(self.dgp, DiscreteDGP):
            J = oracle_discrete_J(self.dgp, self.contrast)
        else:
            J = oracle_linear_sem_J(self.dgp, self.contrast)[0]
        object.__setattr__(self, "oracle_J", J)
        return J


def generate(dgp, n, seed):
    if isinstance(dgp, DiscreteDGP):
        return generate_discrete(dgp, n, seed)
    if isinstance(dgp, LinearSEMDGP):
        return generate_linear_sem(dgp, n, seed)
    raise TypeError(f"unsupported DGP {type(dgp).__name__}")


def _one_replication(dgp, contrast, estimators, n, seed_seq, alpha):
    data = generate(dgp, n, seed_seq)
    fold_seed = int(seed_seq.generate_state(1)[0])
    out = []
    for name, spec in estimators.items():
        rep = estimate(data, contrast, spec.nuisance, spec.estimator, spec.folds, fold_seed, alpha)
        out.append((name, rep.estimate, rep.se, rep.ci[0], rep.ci[1]))
    return out


def run_study(study):
    """Fill ``study.results`` with one row per (size, replication, estimator); reduced in seed order."""
    J = study.truth()
    tasks = [(i, n, r, spawn_seed(study.seed, i, r)) for i, n in enumerate(study.sizes) for r in range(study.reps)]
    args = [(study.dgp, study.contrast, study.estimators, n, ss, study.alpha) for _, n, _, ss in tasks]
    t0 = time.perf_counter()
    if study.jobs and study.jobs > 1:
        with ProcessPoolExecutor(max_workers=study.jobs) as pool:
            outs = list(pool.map(_one_replication, *zip(*args), chunksize=max(1, len(args) // (4 * study.jobs))))
    else:
        outs = [_one_replication(*a) for a in args]
    rows = []
    for (i, n, r, _), out in zip(tasks, outs):
        for name, est, se, lo, hi in out:
            rows.append({
                "size_index": i, "n": n, "rep": r, "estimator": name,
                "estimate": est, "se": se, "ci_lo": lo, "ci_hi": hi,
                "error": est - J, "covered": bool(lo <= J <= hi),
            })
    study.results.clear()
    study.results.extend(rows)
    logger.info("study with %d replications finished in %.1fs", len(tasks), time.perf_counter() - t0)
    return rows


def _rows(study, name):
    if not study.results:
        run_study(study)
    return [r for r in study.results if r["estimator"] == name]


@dataclass(frozen=True)
class RateReport:
    estimator: str
    sizes: list
    rmse: list
    bias: list
    sd: list
    slope: float = None
    slope_se: float = None
    undefined: bool = False
    inversions: int = 0

    def to_dict(self):
        return dict(self.__dict__)


def rate_report(study, name, zero_tol=1e-12):
    rows = _rows(study, name)
    sizes, rmse, bias, sd = [], [], [], []
    for n in study.sizes:
        err = np.array([r["error"] for r in rows if r["n"] == n])
        sizes.append(n)
        rmse.append(float(np.sqrt(np.mean(err**2))))
        bias.append(float(err.mean()))
        sd.append(float(err.std(ddof=1)) if err.size > 1 else 0.0)
    inversions = int(np.sum(np.diff(rmse) > 0))
    if len(sizes) < 3 or min(rmse) <= zero_tol:
        return RateReport(name, sizes, rmse, bias, sd, None, None, True, inversions)
    fit = stats.linregress(np.log(sizes), np.log(rmse))
    return RateReport(name, sizes, rmse, bias, sd, float(fit.slope), float(fit.stderr), False, inversions)


def run_rate_study(study):
    """Least-squares slope of log RMSE against log n for every estimator of the study."""
    if len(study.sizes) < 3:
        raise ValueError("a rate study needs at least 3 sample sizes")
    if not study.results:
        run_study(study)
    return {name: rate_report(study, name) for name in study.estimators}


@dataclass(frozen=True)
class CoverageReport:
    estimator: str
    n: int
    coverage: float
    ci: tuple
    replications: int
    zero_variance: bool = False

    def to_dict(self):
        return dict(self.__dict__)


def run_coverage_study(study, confidence=0.95):
    """Fraction of intervals covering J, per estimator and size, with a Clopper-Pearson interval."""
    if not study.results:
        run_study(study)
    J = study.truth()
    out = {}
    for name in study.estimators:
        rows = _rows(study, name)
        for n in study.sizes:
            cell = [r for r in rows if r["n"] == n]
            zero_var = all(r["se"] == 0 for r in cell)
            if zero_var:
                hits = sum(abs(r["estimate"] - J) <= 1e-12 * max(1.0, abs(J)) for r in cell)
            else:
                hits = sum(r["covered"] for r in cell)
            ci = stats.binomtest(int(hits), len(cell)).proportion_ci(confidence, method="exact")
            out[(name, n)] = CoverageReport(name, n, hits / len(cell), (float(ci.low), float(ci.high)),
                                            len(cell), zero_var)
    return out


# --------------------------------------------------------------------------
# projected MSE against the enumeration oracle


@dataclass(frozen=True)
class ProjectedMSECurve:
    sizes: list
    h_residual: list
    q_residual: list
    reg_error: list
    ipw_error: list
    dr_error: list
    monotone_h: bool
    monotone_q: bool

    def to_dict(self):
        return dict(self.__dict__)


def projected_mse_curve(dgp, nuisance, sizes, reps, seed=0, contrast=None):
    """Mean exact projected residuals of fitted bridges and mean |J_hat - J| per size (full-sample fits)."""
    from .gace import estimate_dr, estimate_ipw, estimate_reg

    contrast = contrast or dgp.contrast()
    J = oracle_discrete_J(dgp, contrast)
    cols = {k: [] for k in ("h", "q", "reg", "ipw", "dr")}
    for i, n in enumerate(sizes):
        acc = {k: [] for k in cols}
        for r in range(reps):
            data = generate_discrete(dgp, n, spawn_seed(seed, i, r))
            h, q = nuisance.fit(data, contrast)
            acc["h"].append(oracle_conditional_residual(dgp, h, "h"))
            acc["q"].append(oracle_conditional_residual(dgp, q, "q", contrast))
            acc["reg"].append(abs(estimate_reg(h, data, contrast).estimate - J))
            acc["ipw"].append(abs(estimate_ipw(q, data, contrast).estimate - J))
            acc["dr"].append(abs(estimate_dr(h, q, data, contrast).estimate - J))
        for k in cols:
            cols[k].append(float(np.mean(acc[k])))
    mono_h = bool(np.all(np.diff(cols["h"]) <= 0))
    mono_q = bool(np.all(np.diff(cols["q"]) <= 0))
    return ProjectedMSECurve(list(sizes), cols["h"], cols["q"], cols["reg"], cols["ipw"], cols["dr"], mono_h, mono_q)


def bridge_tables(dgp, h=None, q=None):
    """Convenience: fitted bridges as (proxy, a, x) tables."""
    out = {}
    if h is not None:
        out["h"] = as_table(dgp, h, "h")
    if q is not None:
        out["q"] = as_table(dgp, q, "q")
    return out
