"""Synthetic data-generating processes with exact oracles.

``DiscreteDGP`` is a finite model over (X, U, A, Z, W) in which every
population quantity (the target J, bridge sets, projected residuals,
identification identities) is computed by enumeration. ``LinearSEMDGP``
is the linear structural model with uniform actions whose bridge
functions are available in closed form.

Random streams: every generator takes an ``int``, a ``SeedSequence`` or a
``Generator``. Replication ``r`` of cell ``i`` of a study with master seed
``s`` uses ``spawn_seed(s, i, r)``, i.e. ``SeedSequence(s, spawn_key=(i, r))``.
"""

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from . import linalg
from .core import (
    BridgeFit,
    ContinuousActions,
    DiscreteActions,
    ObservationTable,
    SieveDescriptor,
    policy_table,
)
from .errors import BridgeExistenceError
from .features import IndicatorFeatures, PolynomialFeatures

PROB_ATOL = 1e-12
PINV_RTOL = 1e-10


def spawn_seed(master, *key):
    """Child seed for the replication identified by ``key`` (ints)."""
    return np.random.SeedSequence(int(master), spawn_key=tuple(int(k) for k in key))


def as_generator(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def _categorical(rng, probs):
    """One draw per row of ``probs`` (rows sum to one)."""
    probs = np.atleast_2d(probs)
    cum = np.cumsum(probs, axis=1)
    u = rng.random(probs.shape[0])[:, None]
    return np.minimum((cum <= u).sum(axis=1), probs.shape[1] - 1)


def _check_stochastic(name, table):
    table = np.asarray(table, dtype=float)
    if np.any(table < 0) or not np.all(np.isfinite(table)):
        raise ValueError(f"{name} has negative or non-finite entries")
    if np.any(np.abs(table.sum(axis=-1) - 1.0) > PROB_ATOL):
        raise ValueError(f"rows of {name} must sum to 1 within {PROB_ATOL}")
    return table


def _hash_dict(d):
    return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()


# --------------------------------------------------------------------------
# discrete model


@dataclass(frozen=True, eq=False)
class DiscreteDGP:
    """Finite negative-control model.

    Array axes: ``p_x[x]``, ``p_u[x, u]``, ``f_a[x, u, a]``, ``p_w[x, u, w]``
    (the law of W is free of a and z), ``p_z[x, u, a, z]``,
    ``y_mean[x, u, a]``. Y is ``y_mean`` plus Uniform(-noise, noise).
    ``contrast_table[x, a]`` is the default contrast (one row = x-free).
    W, Z and X are emitted as single integer-coded columns.
    """

    p_x: np.ndarray
    p_u: np.ndarray
    f_a: np.ndarray
    p_w: np.ndarray
    p_z: np.ndarray
    y_mean: np.ndarray
    noise: float = 0.5
    contrast_table: np.ndarray = None
    name: str = "discrete"

    def __post_init__(self):
        p_x = _check_stochastic("p_x", self.p_x)
        p_u = _check_stochastic("p_u", self.p_u)
        f_a = _check_stochastic("f_a", self.f_a)
        p_w = _check_stochastic("p_w", self.p_w)
        p_z = _check_stochastic("p_z", self.p_z)
        y_mean = np.asarray(self.y_mean, dtype=float)
        nx = p_x.shape[0]
        nu = p_u.shape[1]
        na = f_a.shape[2]
        if p_u.shape != (nx, nu):
            raise ValueError("p_u must have shape (|X|, |U|)")
        if f_a.shape[:2] != (nx, nu):
            raise ValueError("f_a must have shape (|X|, |U|, |A|)")
        if p_w.shape[:2] != (nx, nu):
            raise ValueError("p_w must have shape (|X|, |U|, |W|)")
        if p_z.shape[:3] != (nx, nu, na):
            raise ValueError("p_z must have shape (|X|, |U|, |A|, |Z|)")
        if y_mean.shape != (nx, nu, na):
            raise ValueError("y_mean must have shape (|X|, |U|, |A|)")
        if np.any(f_a <= 0):
            raise ValueError("overlap violated: f(a | u, x) must be positive in every cell")
        if not self.noise >= 0:
            raise ValueError("noise half-width must be non-negative")
        table = self.contrast_table
        if table is None:
            table = np.full((1, na), 1.0 / na)
        table = np.atleast_2d(np.asarray(table, dtype=float))
        if table.shape[1] != na or table.shape[0] not in (1, nx):
            raise ValueError("contrast_table must have shape (1 or |X|, |A|)")
        for name, arr in (("p_x", p_x), ("p_u", p_u), ("f_a", f_a), ("p_w", p_w), ("p_z", p_z),
                          ("y_mean", y_mean), ("contrast_table", table)):
            arr = arr.copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "noise", float(self.noise))

    # -- shapes ---------------------------------------------------------
    @property
    def n_x(self):
        return self.p_x.shape[0]

    @property
    def n_u(self):
        return self.p_u.shape[1]

    @property
    def n_a(self):
        return self.f_a.shape[2]

    @property
    def n_w(self):
        return self.p_w.shape[2]

    @property
    def n_z(self):
        return self.p_z.shape[3]

    @property
    def actions(self):
        return DiscreteActions(tuple(range(self.n_a)))

    def contrast(self):
        return policy_table(self.contrast_table)

    def saturated_features(self, bridge):
        """One-hot features over (proxy, a, x) cells; ``bridge`` is 'h' (W) or 'q' (Z)."""
        levels = self.n_w if bridge == "h" else self.n_z
        return IndicatorFeatures((levels,), self.n_a, (self.n_x,))

    def proxy_constant_features(self):
        """One-hot features over (a, x) only: ignores the proxy."""
        return IndicatorFeatures(None, self.n_a, (self.n_x,))

    # -- joint laws -----------------------------------------------------
    @property
    def p_xu(self):
        return self.p_x[:, None] * self.p_u

    @property
    def p_xua(self):
        return self.p_xu[:, :, None] * self.f_a

    @property
    def p_xuaz(self):
        return self.p_xua[..., None] * self.p_z

    @property
    def p_xuw(self):
        return self.p_xu[..., None] * self.p_w

    def to_dict(self):
        return {
            "type": "discrete",
            "name": self.name,
            "p_x": self.p_x.tolist(),
            "p_u": self.p_u.tolist(),
            "f_a": self.f_a.tolist(),
            "p_w": self.p_w.tolist(),
            "p_z": self.p_z.tolist(),
            "y_mean": self.y_mean.tolist(),
            "noise": self.noise,
            "contrast_table": self.contrast_table.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            np.asarray(d["p_x"]), np.asarray(d["p_u"]), np.asarray(d["f_a"]), np.asarray(d["p_w"]),
            np.asarray(d["p_z"]), np.asarray(d["y_mean"]), float(d.get("noise", 0.5)),
            None if d.get("contrast_table") is None else np.asarray(d["contrast_table"]),
            d.get("name", "discrete"),
        )

    def digest(self):
        return _hash_dict(self.to_dict())


def generate_discrete(dgp, n, seed=0, return_confounders=False):
    """n draws of X -> U -> A | U,X -> Z | U,A,X ; W | U,X ; Y | U,A,X."""
    rng = as_generator(seed)
    n = int(n)
    x = _categorical(rng, np.broadcast_to(dgp.p_x, (n, dgp.n_x))) if n else np.zeros(0, int)
    u = _categorical(rng, dgp.p_u[x]) if n else np.zeros(0, int)
    a = _categorical(rng, dgp.f_a[x, u]) if n else np.zeros(0, int)
    z = _categorical(rng, dgp.p_z[x, u, a]) if n else np.zeros(0, int)
    w = _categorical(rng, dgp.p_w[x, u]) if n else np.zeros(0, int)
    eps = dgp.noise * (2.0 * rng.random(n) - 1.0)
    y = dgp.y_mean[x, u, a] + eps
    data = ObservationTable(
        y, w.reshape(n, 1).astype(float), z.reshape(n, 1).astype(float), a,
        x.reshape(n, 1).astype(float), dgp.actions,
    )
    if return_confounders:
        return data, u
    return data


def _pi_table(dgp, contrast=None):
    """Contrast evaluated on the grid as an (|X|, |A|) array."""
    if contrast is None:
        contrast = dgp.contrast()
    contrast.check_compatible(dgp.actions)
    out = np.empty((dgp.n_x, dgp.n_a))
    acts = np.arange(dgp.n_a)
    for xc in range(dgp.n_x):
        out[xc] = contrast(acts, np.full((dgp.n_a, 1), float(xc)))
    return out


def oracle_discrete_J(dgp, contrast=None):
    """J = E[sum_a pi(a | X) E[Y | U, a, X]] by enumeration."""
    pi = _pi_table(dgp, contrast)
    return float(np.einsum("xu,xa,xua->", dgp.p_xu, pi, dgp.y_mean))


def u_level_forms(dgp, contrast=None):
    """(IPW, REG, DR) population values with U observed, by enumeration."""
    pi = _pi_table(dgp, contrast)
    p = dgp.p_xua
    ratio = pi[:, None, :] / dgp.f_a
    ipw = float(np.sum(p * ratio * dgp.y_mean))
    reg = float(np.einsum("xu,xa,xua->", dgp.p_xu, pi, dgp.y_mean))
    # E[Y - k0 | U, A, X] = 0, so the correction term vanishes cell by cell
    dr = float(np.sum(p * ratio * (dgp.y_mean - dgp.y_mean))) + reg
    return ipw, reg, dr


# -- tables and bridge fits -------------------------------------------------


def _grid(dgp, levels):
    """All (proxy, a, x) cells in row-major (proxy, a, x) order."""
    pr, aa, xx = np.meshgrid(np.arange(levels), np.arange(dgp.n_a), np.arange(dgp.n_x), indexing="ij")
    return pr.ravel().astype(float)[:, None], aa.ravel(), xx.ravel().astype(float)[:, None]


def as_table(dgp, candidate, bridge):
    """Bridge values as a (proxy, a, x) table from a BridgeFit or an array."""
    levels = dgp.n_w if bridge == "h" else dgp.n_z
    shape = (levels, dgp.n_a, dgp.n_x)
    if isinstance(candidate, BridgeFit):
        proxy, a, x = _grid(dgp, levels)
        return candidate(proxy, a, x).reshape(shape)
    table = np.asarray(candidate, dtype=float)
    if table.shape != shape:
        raise ValueError(f"bridge table must have shape {shape}, got {table.shape}")
    return table


def table_bridge(dgp, table, bridge):
    """Saturated-indicator BridgeFit reproducing a (proxy, a, x) table."""
    features = dgp.saturated_features(bridge)
    kind = "outcome" if bridge == "h" else "action"
    return BridgeFit(kind, SieveDescriptor(np.asarray(table, float).ravel(), features), dgp.actions,
                     {"source": "oracle-table"})


@dataclass(frozen=True, eq=False)
class BridgeSet:
    """Affine set ``particular + span(null_basis)`` of table-valued bridges."""

    bridge: str
    particular: np.ndarray
    null_basis: np.ndarray
    dgp: DiscreteDGP = field(repr=False)

    @property
    def null_dim(self):
        return self.null_basis.shape[0]

    @property
    def unique(self):
        return self.null_dim == 0

    def member(self, coeffs=None):
        if coeffs is None:
            return self.particular.copy()
        coeffs = np.asarray(coeffs, dtype=float).reshape(-1)
        return self.particular + np.tensordot(coeffs, self.null_basis, axes=1)

    def fit(self, coeffs=None):
        return table_bridge(self.dgp, self.member(coeffs), self.bridge)


@dataclass(frozen=True, eq=False)
class DiscreteBridgeSets:
    h: BridgeSet
    q: BridgeSet


def oracle_discrete_bridge_sets(dgp):
    """Solve the U-level bridge equations cell by cell with a pseudoinverse.

    For each (a, x): ``p_w[x] @ h[:, a, x] = y_mean[x, :, a]`` and
    ``p_z[x, :, a] @ q[:, a, x] = 1 / f_a[x, :, a]``.
    """
    nx, nu, na, nw, nz = dgp.n_x, dgp.n_u, dgp.n_a, dgp.n_w, dgp.n_z
    h = np.zeros((nw, na, nx))
    q = np.zeros((nz, na, nx))
    h_null, q_null = [], []
    for xc in range(nx):
        mw = dgp.p_w[xc]
        if linalg.rank(mw, PINV_RTOL) < nu:
            raise BridgeExistenceError(
                f"P(W | U, x={xc}) has rank {linalg.rank(mw, PINV_RTOL)} < |U| = {nu}: "
                "bridge existence not guaranteed"
            )
        mw_pinv = linalg.pinv(mw, PINV_RTOL)
        nw_basis = linalg.null_space(mw, PINV_RTOL)
        for ac in range(na):
            h[:, ac, xc] = mw_pinv @ dgp.y_mean[xc, :, ac]
            for v in nw_basis.T:
                t = np.zeros((nw, na, nx))
                t[:, ac, xc] = v
                h_null.append(t)
            mz = dgp.p_z[xc, :, ac, :]
            rz = linalg.rank(mz, PINV_RTOL)
            if rz < nu:
                raise BridgeExistenceError(
                    f"P(Z | U, a={ac}, x={xc}) has rank {rz} < |U| = {nu}: bridge existence not guaranteed"
                )
            q[:, ac, xc] = linalg.pinv(mz, PINV_RTOL) @ (1.0 / dgp.f_a[xc, :, ac])
            for v in linalg.null_space(mz, PINV_RTOL).T:
                t = np.zeros((nz, na, nx))
                t[:, ac, xc] = v
                q_null.append(t)
    h_basis = np.array(h_null) if h_null else np.zeros((0, nw, na, nx))
    q_basis = np.array(q_null) if q_null else np.zeros((0, nz, na, nx))
    return DiscreteBridgeSets(BridgeSet("h", h, h_basis, dgp), BridgeSet("q", q, q_basis, dgp))


# -- conditional moments by enumeration ---------------------------------------


def _eh_given_u(dgp, h):
    """E[h(W, a, x) | U=u, x] as an (x, u, a) array."""
    return np.einsum("xuw,wax->xua", dgp.p_w, h)


def _eq_given_u(dgp, q):
    """E[q(Z, a, x) | U=u, A=a, x] as an (x, u, a) array."""
    return np.einsum("xuaz,zax->xua", dgp.p_z, q)


def u_level_residuals(dgp, h=None, q=None):
    """Max violations of the U-level bridge equations."""
    out = {}
    if h is not None:
        out["h"] = float(np.abs(_eh_given_u(dgp, as_table(dgp, h, "h")) - dgp.y_mean).max())
    if q is not None:
        out["q"] = float(np.abs(_eq_given_u(dgp, as_table(dgp, q, "q")) - 1.0 / dgp.f_a).max())
    return out


def _h_moment_zax(dgp, h):
    """p(z,a,x) * E[Y - h | z, a, x] as an (x, a, z) array, and p(z, a, x)."""
    diff = dgp.y_mean - _eh_given_u(dgp, h)
    num = np.einsum("xuaz,xua->xaz", dgp.p_xuaz, diff)
    p = dgp.p_xuaz.sum(axis=1)
    return num, p


def _q_moment_wax(dgp, q):
    """p(w,a,x) * (E[q | w, a, x] - 1/f(a | w, x)) as an (x, a, w) array, and p(w, a, x)."""
    eq = _eq_given_u(dgp, q)
    p_wax = np.einsum("xua,xuw->xaw", dgp.p_xua, dgp.p_w)
    num_q = np.einsum("xua,xuw,xua->xaw", dgp.p_xua, dgp.p_w, eq)
    p_wx = p_wax.sum(axis=1, keepdims=True)
    return num_q - p_wx, p_wax


def observed_level_residuals(dgp, h=None, q=None):
    """Max |E[Y - h | z,a,x]| and max |E[q | w,a,x] - 1/f(a | w,x)| over cells with mass."""
    out = {}
    if h is not None:
        num, p = _h_moment_zax(dgp, as_table(dgp, h, "h"))
        mask = p > 0
        out["h"] = float(np.abs(num[mask] / p[mask]).max())
    if q is not None:
        num, p = _q_moment_wax(dgp, as_table(dgp, q, "q"))
        mask = p > 0
        out["q"] = float(np.abs(num[mask] / p[mask]).max())
    return out


def oracle_conditional_residual(dgp, candidate, bridge, contrast=None):
    """Exact projected RMSE of a candidate bridge.

    ``bridge='h'``: ||E[Y - h(W,A,X) | Z,A,X]||_2.
    ``bridge='q'``: ||E[pi(A|X) (q(Z,A,X) - 1/f(A|W,X)) | W,A,X]||_2.
    """
    if bridge == "h":
        num, p = _h_moment_zax(dgp, as_table(dgp, candidate, "h"))
        mask = p > 0
        return float(np.sqrt(np.sum(num[mask] ** 2 / p[mask])))
    if bridge == "q":
        pi = _pi_table(dgp, contrast)
        num, p = _q_moment_wax(dgp, as_table(dgp, candidate, "q"))
        num = num * pi[:, :, None]
        mask = p > 0
        return float(np.sqrt(np.sum(num[mask] ** 2 / p[mask])))
    raise ValueError("bridge must be 'h' or 'q'")


# -- population functionals ---------------------------------------------------


def population_reg(dgp, h, contrast=None):
    """E[(T h)(W, X)]."""
    pi = _pi_table(dgp, contrast)
    h = as_table(dgp, h, "h")
    return float(np.einsum("xuw,xa,wax->", dgp.p_xuw, pi, h))


def population_ipw(dgp, q, contrast=None):
    """E[pi(A|X) q(Z,A,X) Y]."""
    pi = _pi_table(dgp, contrast)
    q = as_table(dgp, q, "q")
    return float(np.einsum("xuaz,xa,zax,xua->", dgp.p_xuaz, pi, q, dgp.y_mean))


def population_dr(dgp, h, q, contrast=None):
    """E[pi q (Y - h) + T h]."""
    pi = _pi_table(dgp, contrast)
    h = as_table(dgp, h, "h")
    q = as_table(dgp, q, "q")
    eh = _eh_given_u(dgp, h)
    corr = np.einsum("xuaz,xa,zax,xua->", dgp.p_xuaz, pi, q, dgp.y_mean - eh)
    return float(corr) + population_reg(dgp, h, contrast)


def reg_bias_identity(dgp, h, q0, contrast=None):
    """(E[T h] - J, E[pi q0 E[h - Y | Z,A,X]]) for any h and an observed q-bridge q0."""
    pi = _pi_table(dgp, contrast)
    lhs = population_reg(dgp, h, contrast) - oracle_discrete_J(dgp, contrast)
    num, _ = _h_moment_zax(dgp, as_table(dgp, h, "h"))  # p(z,a,x) E[Y - h | z,a,x]
    q0 = as_table(dgp, q0, "q")
    rhs = -float(np.einsum("xa,zax,xaz->", pi, q0, num))
    return lhs, rhs


def ipw_bias_identity(dgp, q, h0, contrast=None):
    """(E[pi q Y] - J, E[h0 E[pi (q - 1/f(A|W,X)) | W,A,X]]) for any q and an observed h-bridge h0."""
    pi = _pi_table(dgp, contrast)
    lhs = population_ipw(dgp, q, contrast) - oracle_discrete_J(dgp, contrast)
    num, _ = _q_moment_wax(dgp, as_table(dgp, q, "q"))  # p(w,a,x) (E[q|w,a,x] - 1/f)
    h0 = as_table(dgp, h0, "h")
    rhs = float(np.einsum("xa,wax,xaw->", pi, h0, num))
    return lhs, rhs


# -- completeness -------------------------------------------------------------


@dataclass(frozen=True)
class CompletenessReport:
    rank_w_given_u: dict
    rank_z_given_u: dict
    rank_w_given_z: dict
    rank_w_given_z_product: dict
    max_product_discrepancy: float
    n_u: int
    n_w: int
    n_z: int
    bridges_exist: bool
    unique_h: bool
    unique_q: bool
    observed_completeness_1: bool
    observed_completeness_2: bool
    cardinality_allows_1: bool
    cardinality_allows_2: bool

    def to_dict(self):
        out = {}
        for k, v in self.__dict__.items():
            out[k] = {str(kk): vv for kk, vv in v.items()} if isinstance(v, dict) else v
        return out


def completeness_rank_check(dgp, rtol=PINV_RTOL):
    """Ranks of the proxy matrices per cell and the completeness conditions they allow."""
    nu, nw, nz = dgp.n_u, dgp.n_w, dgp.n_z
    r_wu, r_zu, r_wz, r_wz_prod = {}, {}, {}, {}
    r_zw = {}
    worst = 0.0
    for xc in range(dgp.n_x):
        r_wu[xc] = linalg.rank(dgp.p_w[xc], rtol)
        for ac in range(dgp.n_a):
            joint_uz = dgp.p_xuaz[xc, :, ac, :]  # (u, z)
            p_z = joint_uz.sum(axis=0)
            p_u_given_z = joint_uz / np.where(p_z > 0, p_z, 1.0)  # column z is P(U | z)
            joint_wz = np.einsum("uz,uw->zw", joint_uz, dgp.p_w[xc])
            p_w_given_z = joint_wz / np.where(p_z > 0, p_z, 1.0)[:, None]  # row z is P(W | z)
            product = p_u_given_z.T @ dgp.p_w[xc]
            worst = max(worst, float(np.abs(product - p_w_given_z).max()))
            r_zu[(ac, xc)] = linalg.rank(dgp.p_z[xc, :, ac, :], rtol)
            r_wz[(ac, xc)] = linalg.rank(p_w_given_z, rtol)
            r_wz_prod[(ac, xc)] = linalg.rank(product, rtol)
            joint_uw = dgp.p_xua[xc, :, ac][:, None] * dgp.p_w[xc]
            p_w = joint_uw.sum(axis=0)
            joint_zw = np.einsum("uw,uz->wz", joint_uw, dgp.p_z[xc, :, ac, :])
            r_zw[(ac, xc)] = linalg.rank(joint_zw / np.where(p_w > 0, p_w, 1.0)[:, None], rtol)
    exist = all(r == nu for r in r_wu.values()) and all(r == nu for r in r_zu.values())
    return CompletenessReport(
        rank_w_given_u=r_wu,
        rank_z_given_u=r_zu,
        rank_w_given_z=r_wz,
        rank_w_given_z_product=r_wz_prod,
        max_product_discrepancy=worst,
        n_u=nu, n_w=nw, n_z=nz,
        bridges_exist=exist,
        unique_h=exist and nw == nu,
        unique_q=exist and nz == nu,
        observed_completeness_1=all(r == nw for r in r_wz.values()),
        observed_completeness_2=all(r == nz for r in r_zw.values()),
        cardinality_allows_1=nz >= nw == nu,
        cardinality_allows_2=nw >= nz == nu,
    )


# -- random and bundled discrete models ---------------------------------------


def random_discrete_dgp(seed, n_u=2, n_w=2, n_z=2, n_a=2, n_x=2, noise=0.5, min_prob=0.1, contrast="ate"):
    """Dirichlet-drawn tables with every f(a | u, x) >= ``min_prob / n_a``."""
    rng = as_generator(seed)

    def simplex(shape, k):
        p = rng.dirichlet(np.ones(k), size=shape)
        return (1 - min_prob) * p + min_prob / k

    p_x = simplex((), n_x)
    p_u = simplex((n_x,), n_u)
    f_a = simplex((n_x, n_u), n_a)
    p_w = simplex((n_x, n_u), n_w)
    p_z = simplex((n_x, n_u, n_a), n_z)
    y_mean = rng.normal(size=(n_x, n_u, n_a))
    if contrast == "ate" and n_a == 2:
        table = np.array([[-1.0, 1.0]])
    else:
        table = simplex((n_x,), n_a)
    return DiscreteDGP(p_x, p_u, f_a, p_w, p_z, y_mean, noise, table, name=f"random-{n_u}{n_w}{n_z}{n_a}{n_x}")


def _unique_dgp():
    # |X| = 1 keeps the cell count (and the sampling floor of projected residuals) small
    p_x = np.array([1.0])
    p_u = np.array([[0.5, 0.5]])
    f1 = np.array([[0.4, 0.6]])  # P(A=1 | u)
    f_a = np.stack([1 - f1, f1], axis=-1)
    p_w = np.array([[[0.95, 0.05], [0.05, 0.95]]])
    z_a0 = np.array([[0.95, 0.05], [0.05, 0.95]])
    z_a1 = np.array([[0.92, 0.08], [0.08, 0.92]])
    p_z = np.stack([z_a0, z_a1], axis=1)[None]
    u = np.arange(2)[None, :, None]
    a = np.arange(2)[None, None, :]
    y_mean = 1.0 + 1.0 * a + 2.0 * u + 0.5 * a * u
    return DiscreteDGP(p_x, p_u, f_a, p_w, p_z, y_mean, 0.5, np.array([[-1.0, 1.0]]), name="unique")


def _nonunique_dgp():
    p_x = np.array([0.5, 0.5])
    p_u = np.array([[0.55, 0.45], [0.35, 0.65]])
    f1 = np.array([[0.3, 0.65], [0.35, 0.7]])
    f_a = np.stack([1 - f1, f1], axis=-1)
    w_u = np.array([[0.6, 0.3, 0.1], [0.1, 0.3, 0.6]])
    p_w = np.stack([w_u, w_u])
    z_u = np.array([[0.65, 0.25, 0.1], [0.15, 0.25, 0.6]])
    p_z = np.broadcast_to(z_u[None, :, None, :], (2, 2, 2, 3)).copy()
    u = np.arange(2)[None, :, None]
    a = np.arange(2)[None, None, :]
    x = np.arange(2)[:, None, None]
    y_mean = 0.5 + 1.2 * a + 1.0 * u + 0.4 * x - 0.3 * a * u
    return DiscreteDGP(p_x, p_u, f_a, p_w, p_z, y_mean, 0.5, np.array([[-1.0, 1.0]]), name="nonunique")


def _identity_dgp():
    p_x = np.array([1.0])
    p_u = np.array([[0.5, 0.5]])
    f1 = np.array([[0.3, 0.7]])
    f_a = np.stack([1 - f1, f1], axis=-1)
    p_w = np.eye(2)[None]
    p_z = np.broadcast_to(np.eye(2)[None, :, None, :], (1, 2, 2, 2)).copy()
    y_mean = np.array([[[0.0, 1.0], [1.0, 2.5]]])
    return DiscreteDGP(p_x, p_u, f_a, p_w, p_z, y_mean, 0.5, np.array([[-1.0, 1.0]]), name="identity")


def _behavior_policy_dgp():
    # actions ignore U, so q0 = 1/f(a|x) and pi(a|x) = f(a|x) makes pi*q0 == 1
    p_x = np.array([1.0])
    p_u = np.array([[0.45, 0.55]])
    f_a = np.array([[[0.4, 0.6], [0.4, 0.6]]])
    w_u = np.array([[0.6, 0.3, 0.1], [0.1, 0.3, 0.6]])
    p_w = w_u[None]
    z_u = np.array([[0.7, 0.2, 0.1], [0.1, 0.3, 0.6]])
    p_z = np.broadcast_to(z_u[None, :, None, :], (1, 2, 2, 3)).copy()
    y_mean = np.array([[[0.0, 1.0], [2.0, 3.5]]])
    return DiscreteDGP(p_x, p_u, f_a, p_w, p_z, y_mean, 0.5, np.array([[0.4, 0.6]]), name="behavior_policy")


BUNDLED = {
    "unique": _unique_dgp,
    "nonunique": _nonunique_dgp,
    "identity": _identity_dgp,
    "behavior_policy": _behavior_policy_dgp,
}


def bundled_dgp(name):
    try:
        return BUNDLED[name]()
    except KeyError:
        raise KeyError(f"unknown bundled DGP {name!r}; choose from {sorted(BUNDLED)}") from None


def bundled_discrete_dgps():
    return {name: build() for name, build in BUNDLED.items()}


# --------------------------------------------------------------------------
# linear structural model


def _vec(v, size, name):
    v = np.asarray(v, dtype=float).reshape(-1)
    if v.shape[0] != size:
        raise ValueError(f"{name} must have length {size}")
    return v


def _mat(m, shape, name):
    m = np.asarray(m, dtype=float).reshape(shape)
    return m


@dataclass(frozen=True, eq=False)
class LinearSEMDGP:
    """Linear model with A ~ Uniform(lo(U, X), hi(U, X)).

    Y = alpha_y.U + beta_y.X + gamma_y A + omega_y.W + eps_y
    Z = alpha_z U + beta_z X + gamma_z A + eps_z
    W = alpha_w U + beta_w X + eps_w
    lo = a_lo_u.U + a_lo_x.X, hi = a_hi_u.U + a_hi_x.X

    U and X are independent uniforms on the boxes [u_low, u_high]^p_u and
    [x_low, x_high]^d_x; noises are Gaussian with variances var_*.
    """

    alpha_y: np.ndarray
    beta_y: np.ndarray
    gamma_y: float
    omega_y: np.ndarray
    alpha_z: np.ndarray
    beta_z: np.ndarray
    gamma_z: np.ndarray
    alpha_w: np.ndarray
    beta_w: np.ndarray
    a_lo_u: np.ndarray
    a_lo_x: np.ndarray
    a_hi_u: np.ndarray
    a_hi_x: np.ndarray
    var_y: float = 1.0
    var_z: float = 1.0
    var_w: float = 1.0
    u_low: float = 1.0
    u_high: float = 2.0
    x_low: float = 0.0
    x_high: float = 1.0
    name: str = "linear_sem"

    def __post_init__(self):
        alpha_z = np.atleast_2d(np.asarray(self.alpha_z, dtype=float))
        alpha_w = np.atleast_2d(np.asarray(self.alpha_w, dtype=float))
        pz, pu = alpha_z.shape
        pw = alpha_w.shape[0]
        if alpha_w.shape[1] != pu:
            raise ValueError("alpha_w and alpha_z must have the same number of columns (p_u)")
        dx = np.asarray(self.beta_y, dtype=float).reshape(-1).shape[0]
        vals = {
            "alpha_y": _vec(self.alpha_y, pu, "alpha_y"),
            "beta_y": _vec(self.beta_y, dx, "beta_y"),
            "omega_y": _vec(self.omega_y, pw, "omega_y"),
            "alpha_z": alpha_z,
            "beta_z": _mat(self.beta_z, (pz, dx), "beta_z"),
            "gamma_z": _vec(self.gamma_z, pz, "gamma_z"),
            "alpha_w": alpha_w,
            "beta_w": _mat(self.beta_w, (pw, dx), "beta_w"),
            "a_lo_u": _vec(self.a_lo_u, pu, "a_lo_u"),
            "a_lo_x": _vec(self.a_lo_x, dx, "a_lo_x"),
            "a_hi_u": _vec(self.a_hi_u, pu, "a_hi_u"),
            "a_hi_x": _vec(self.a_hi_x, dx, "a_hi_x"),
        }
        for k, v in vals.items():
            v = v.copy()
            v.setflags(write=False)
            object.__setattr__(self, k, v)
        for k in ("gamma_y", "var_y", "var_z", "var_w", "u_low", "u_high", "x_low", "x_high"):
            object.__setattr__(self, k, float(getattr(self, k)))
        if min(self.var_y, self.var_z, self.var_w) < 0:
            raise ValueError("noise variances must be non-negative")
        if self.u_high < self.u_low or self.x_high < self.x_low:
            raise ValueError("box bounds must satisfy low <= high")
        if linalg.rank(alpha_z, PINV_RTOL) < pu:
            raise ValueError("alpha_z must have full column rank")
        if linalg.rank(alpha_w, PINV_RTOL) < pu:
            raise ValueError("alpha_w must have full column rank")
        width = self.min_action_width()
        degenerate = self.u_low == self.u_high and (dx == 0 or self.x_low == self.x_high)
        if width < 0 or (width == 0 and not degenerate):
            raise ValueError("action upper bound must exceed the lower bound on the support of (U, X)")

    @property
    def p_u(self):
        return self.alpha_z.shape[1]

    @property
    def p_z(self):
        return self.alpha_z.shape[0]

    @property
    def p_w(self):
        return self.alpha_w.shape[0]

    @property
    def d_x(self):
        return self.beta_y.shape[0]

    def min_action_width(self):
        """Minimum of hi - lo over the (U, X) box; linear, so attained at a corner."""
        cu = self.a_hi_u - self.a_lo_u
        cx = self.a_hi_x - self.a_lo_x
        return float(np.minimum(cu * self.u_low, cu * self.u_high).sum()
                     + np.minimum(cx * self.x_low, cx * self.x_high).sum())

    def sample_confounders(self, rng, n):
        u = self.u_low + (self.u_high - self.u_low) * rng.random((n, self.p_u))
        x = self.x_low + (self.x_high - self.x_low) * rng.random((n, self.d_x))
        return u, x

    def outcome_regression(self, a, u, x):
        """k0(a, u, x) = E[Y | A=a, U=u, X=x]."""
        ew = u @ self.alpha_w.T + x @ self.beta_w.T
        return u @ self.alpha_y + x @ self.beta_y + self.gamma_y * a + ew @ self.omega_y

    def action_density(self, a, u, x):
        lo = u @ self.a_lo_u + x @ self.a_lo_x
        hi = u @ self.a_hi_u + x @ self.a_hi_x
        inside = (a >= lo) & (a <= hi)
        return np.where(inside, 1.0 / (hi - lo), 0.0)

    def to_dict(self):
        out = {"type": "linear_sem", "name": self.name}
        for k in ("alpha_y", "beta_y", "omega_y", "alpha_z", "beta_z", "gamma_z", "alpha_w", "beta_w",
                  "a_lo_u", "a_lo_x", "a_hi_u", "a_hi_x"):
            out[k] = getattr(self, k).tolist()
        for k in ("gamma_y", "var_y", "var_z", "var_w", "u_low", "u_high", "x_low", "x_high"):
            out[k] = getattr(self, k)
        return out

    @classmethod
    def from_dict(cls, d):
        d = {k: v for k, v in d.items() if k != "type"}
        return cls(**d)

    def digest(self):
        return _hash_dict(self.to_dict())


def generate_linear_sem(dgp, n, seed=0, return_confounders=False):
    """Draw U, X, then A, Z, W, Y in structural order."""
    rng = as_generator(seed)
    n = int(n)
    u, x = dgp.sample_confounders(rng, n)
    lo = u @ dgp.a_lo_u + x @ dgp.a_lo_x
    hi = u @ dgp.a_hi_u + x @ dgp.a_hi_x
    a = lo + (hi - lo) * rng.random(n)
    z = u @ dgp.alpha_z.T + x @ dgp.beta_z.T + np.outer(a, dgp.gamma_z)
    z = z + np.sqrt(dgp.var_z) * rng.standard_normal((n, dgp.p_z))
    w = u @ dgp.alpha_w.T + x @ dgp.beta_w.T + np.sqrt(dgp.var_w) * rng.standard_normal((n, dgp.p_w))
    y = u @ dgp.alpha_y + x @ dgp.beta_y + dgp.gamma_y * a + w @ dgp.omega_y
    y = y + np.sqrt(dgp.var_y) * rng.standard_normal(n)
    data = ObservationTable(y, w, z, a, x, ContinuousActions())
    if return_confounders:
        return data, u
    return data


def linear_sem_theta_family(dgp):
    """Min-norm solutions and null-space bases for theta_w and theta_z.

    theta_w solves alpha_w^T theta = alpha_y; theta_z solves
    alpha_z^T theta = a_hi_u - a_lo_u.
    """
    target_z = dgp.a_hi_u - dgp.a_lo_u
    tw = linalg.pinv(dgp.alpha_w.T, PINV_RTOL) @ dgp.alpha_y
    tz = linalg.pinv(dgp.alpha_z.T, PINV_RTOL) @ target_z
    return {
        "theta_w": (tw, linalg.null_space(dgp.alpha_w.T, PINV_RTOL)),
        "theta_z": (tz, linalg.null_space(dgp.alpha_z.T, PINV_RTOL)),
    }


def oracle_linear_sem_bridges(dgp, theta_w=None, theta_z=None):
    """Closed-form bridges (h0, q0) as affine BridgeFits over (proxy, a, x).

    h0 = (theta_w + omega_y).W + (beta_y - beta_w^T theta_w).X + gamma_y A
    q0 = theta_z.Z + (a_hi_x - a_lo_x - beta_z^T theta_z).X - (theta_z.gamma_z) A
    Unspecified thetas default to the minimum-norm solution.
    """
    fam = linear_sem_theta_family(dgp)
    tw = fam["theta_w"][0] if theta_w is None else np.asarray(theta_w, dtype=float)
    tz = fam["theta_z"][0] if theta_z is None else np.asarray(theta_z, dtype=float)
    target_z = dgp.a_hi_u - dgp.a_lo_u
    scale_w = max(1.0, np.abs(dgp.alpha_y).max())
    scale_z = max(1.0, np.abs(target_z).max())
    if np.abs(dgp.alpha_w.T @ tw - dgp.alpha_y).max() > 1e-8 * scale_w:
        raise BridgeExistenceError("theta_w does not satisfy alpha_w^T theta_w = alpha_y")
    if np.abs(dgp.alpha_z.T @ tz - target_z).max() > 1e-8 * scale_z:
        raise BridgeExistenceError("theta_z does not satisfy alpha_z^T theta_z = a_hi_u - a_lo_u")
    h_feat = PolynomialFeatures(1, dgp.p_w + 1 + dgp.d_x)
    q_feat = PolynomialFeatures(1, dgp.p_z + 1 + dgp.d_x)
    h_coef = np.concatenate([[0.0], tw + dgp.omega_y, [dgp.gamma_y], dgp.beta_y - dgp.beta_w.T @ tw])
    q_coef = np.concatenate([[0.0], tz, [-(tz @ dgp.gamma_z)], dgp.a_hi_x - dgp.a_lo_x - dgp.beta_z.T @ tz])
    acts = ContinuousActions()
    h = BridgeFit("outcome", SieveDescriptor(h_coef, h_feat), acts, {"theta_w": tw.tolist()})
    q = BridgeFit("action", SieveDescriptor(q_coef, q_feat), acts, {"theta_z": tz.tolist()})
    return h, q


def oracle_linear_sem_J(dgp, contrast, n=2_000_000, seed=20240601, chunk=200_000):
    """Monte-Carlo J from the U-observed regression form, with its standard error.

    Averages sum_k weight_k pi(a_k | X) k0(a_k, U, X) over draws of (U, X).
    """
    rng = as_generator(seed)
    nodes, _ = contrast.nodes()
    total, total_sq, count = 0.0, 0.0, 0
    while count < n:
        m = min(chunk, n - count)
        u, x = dgp.sample_confounders(rng, m)
        weights = contrast.node_weights(x)
        phi = np.zeros(m)
        for k, node in enumerate(nodes):
            phi += weights[:, k] * dgp.outcome_regression(np.full(m, node), u, x)
        total += phi.sum()
        total_sq += (phi**2).sum()
        count += m
    mean = total / count
    var = max(total_sq / count - mean**2, 0.0)
    return float(mean), float(np.sqrt(var / count))


def default_linear_sem():
    """p_u = 1, p_w = p_z = 2 (nonunique bridges), d_x = 1, A ~ U(-U, U + X)."""
    return LinearSEMDGP(
        alpha_y=[1.0], beta_y=[0.5], gamma_y=1.0, omega_y=[0.3, 0.0],
        alpha_z=[[1.0], [0.5]], beta_z=[[0.2], [0.0]], gamma_z=[0.3, 0.1],
        alpha_w=[[1.0], [0.8]], beta_w=[[0.3], [-0.2]],
        a_lo_u=[-1.0], a_lo_x=[0.0], a_hi_u=[1.0], a_hi_x=[1.0],
        var_y=0.25, var_z=0.25, var_w=0.25,
        u_low=1.0, u_high=2.0, x_low=0.0, x_high=1.0, name="linear_sem",
    )


def dgp_from_dict(d):
    if isinstance(d, str):
        if d == "linear_sem":
            return default_linear_sem()
        return bundled_dgp(d)
    kind = d.get("type")
    if kind == "discrete":
        return DiscreteDGP.from_dict(d)
    if kind == "linear_sem":
        return LinearSEMDGP.from_dict(d)
    raise ValueError(f"unknown DGP type {kind!r}")
