"""Bridge estimation with RKHS critics, via Gram matrices.

Both bridges are fitted from their evaluations at the sample points. For
the outcome bridge, ``psi = Y - h(W, A, X)`` and the objective is
``psi^T M psi``. For the action bridge, ``phi = pi(A | X) q(Z, A, X)`` and
the objective is ``phi^T M phi - 2 phi^T v``. The strategy fixes M and v:

strategy I (unit-ball critic)
    h: ``M = K_z / n^2``
    q: ``M = K_w1 / n^2``, ``v = K_w2 1 / n^2``
strategy II (critic penalty ``lam E_n[f^2] + (gamma / n) |f|_K^2``)
    h: ``M = K_z^{1/2} (gamma I + lam K_z)^{-1} K_z^{1/2} / (4n)``
    q: ``M = K_w1^{1/2} (gamma I + lam K_w1)^{-1} K_w1^{1/2} / (4n)``,
    ``v = (gamma I + lam K_w1)^{-1} K_w2 1 / (4n)``

Strategy I for q drops the constant ``1^T K_w3 1 / n^2`` (T applied to
both kernel arguments); strategy II for q takes the sup over critics in
the span of the sample kernel sections.

Repeated sample points are collapsed. Writing ``K = E K_u E^T`` with E
the (n, m) incidence matrix of the m distinct points and ``C = E^T E``
their counts, ``K^{1/2} (gamma I + lam K)^{-1} K^{1/2} = K (gamma I + lam K)^{-1}
= E K_u (gamma I + lam C K_u)^{-1} E^T``, so every solve is m x m. On
discrete data m is the number of cells, whatever n is.
"""

import hashlib
import logging
import os
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse

from . import linalg
from .core import BridgeFit, DiscreteActions, KernelDescriptor, SieveDescriptor, t_apply_kernel
from .errors import ConditioningError, ConfigurationError
from .features import FeatureMap, feature_map_from_dict
from .kernels import KernelSpec, default_product_kernel, kernel_from_dict
from .linalg import matrix_sqrt_psd

logger = logging.getLogger(__name__)

PSD_RTOL = 1e-10
INDEFINITE_RTOL = 1e-6


# --------------------------------------------------------------------------
# distinct points


@dataclass(frozen=True, eq=False)
class PointSet:
    """Distinct rows of a point set and the index of each sample row among them."""

    points: tuple
    index: np.ndarray

    @property
    def m(self):
        return np.asarray(self.points[-1]).shape[0]

    @property
    def n(self):
        return self.index.shape[0]

    @property
    def counts(self):
        return np.bincount(self.index, minlength=self.m).astype(float)

    def aggregate(self, values):
        """E^T values: sums of per-row values (vector or matrix) over each distinct point."""
        values = np.asarray(values, dtype=float)
        e_t = scipy.sparse.csr_matrix((np.ones(self.n), (self.index, np.arange(self.n))), shape=(self.m, self.n))
        out = e_t @ values
        return np.asarray(out)

    def cross(self, other, weights=None):
        """E_self^T diag(weights) E_other as a dense (m_self, m_other) matrix."""
        w = np.ones(self.n) if weights is None else np.asarray(weights, dtype=float)
        mat = scipy.sparse.csr_matrix((w, (self.index, other.index)), shape=(self.m, other.m))
        return mat.toarray()


def distinct_points(*blocks, compress=True):
    """PointSet over the given (n, .) blocks; with ``compress=False`` every row is its own point."""
    n = np.asarray(blocks[0]).shape[0]
    cols = [np.asarray(b, dtype=float).reshape(n, -1) for b in blocks]
    if not compress or n == 0:
        return PointSet(tuple(np.asarray(b) for b in blocks), np.arange(n))
    stacked = np.hstack(cols)
    _, first, inverse = np.unique(stacked, axis=0, return_index=True, return_inverse=True)
    pts = tuple(np.asarray(b)[first] for b in blocks)
    return PointSet(pts, np.asarray(inverse).reshape(-1))


# --------------------------------------------------------------------------
# Gram bundle


@dataclass(frozen=True, eq=False)
class GramBundle:
    """Kernel matrices on the distinct sample points.

    ``K_z_u`` is the Gram of the distinct (z, a, x) points, ``K_w_u`` of the
    distinct (w, a, x) points and ``K_w2_u[p, t]`` applies T to the second
    argument at the distinct (w, x) targets. The properties ``K_z``,
    ``K_w1`` and ``K_w2`` expand them to full n x n matrices.
    """

    z_set: PointSet
    w_set: PointSet
    K_z_u: np.ndarray
    K_w_u: np.ndarray
    t_set: PointSet = None
    K_w2_u: np.ndarray = None
    kernel_z: KernelSpec = None
    kernel_w: KernelSpec = None
    info: dict = field(default_factory=dict)

    @property
    def n(self):
        return self.z_set.n

    @property
    def K_z(self):
        i = self.z_set.index
        return self.K_z_u[np.ix_(i, i)]

    @property
    def K_w1(self):
        i = self.w_set.index
        return self.K_w_u[np.ix_(i, i)]

    @property
    def K_w2(self):
        if self.K_w2_u is None:
            return None
        return self.K_w2_u[np.ix_(self.w_set.index, self.t_set.index)]

    @property
    def t_sums(self):
        """(K_w2 1) per distinct (w, a, x) point."""
        return self.K_w2_u @ self.t_set.counts

    def psd_flags(self):
        return {"K_z": linalg.is_psd(self.K_z_u, PSD_RTOL), "K_w1": linalg.is_psd(self.K_w_u, PSD_RTOL)}

    def save(self, path):
        arrays = {
            "K_z_u": self.K_z_u, "K_w_u": self.K_w_u,
            "z_index": self.z_set.index, "w_index": self.w_set.index,
        }
        for name, ps in (("z", self.z_set), ("w", self.w_set)):
            for j, blk in enumerate(ps.points):
                arrays[f"{name}_pt{j}"] = blk
        if self.K_w2_u is not None:
            arrays["K_w2_u"] = self.K_w2_u
            arrays["t_index"] = self.t_set.index
            for j, blk in enumerate(self.t_set.points):
                arrays[f"t_pt{j}"] = blk
        np.savez(path, **arrays)

    @classmethod
    def load(cls, path, kernel_z=None, kernel_w=None):
        with np.load(path) as f:
            def pset(name, k):
                return PointSet(tuple(f[f"{name}_pt{j}"] for j in range(k)), f[f"{name}_index"])

            t_set = pset("t", 2) if "K_w2_u" in f.files else None
            k_w2 = f["K_w2_u"] if "K_w2_u" in f.files else None
            return cls(pset("z", 3), pset("w", 3), f["K_z_u"], f["K_w_u"], t_set, k_w2, kernel_z, kernel_w,
                       {"cache": str(path)})


def table_digest(data):
    h = hashlib.sha256()
    for arr in (data.y, data.w, data.z, data.a, data.x):
        arr = np.ascontiguousarray(arr)
        h.update(str(arr.shape).encode())
        h.update(arr.tobytes())
    return h.hexdigest()


def gram_cache_key(data, kernel_z, kernel_w, contrast=None, compress=True):
    spec = repr((kernel_z.to_dict(), kernel_w.to_dict(), None if contrast is None else contrast.to_dict(), compress))
    return hashlib.sha256((table_digest(data) + spec).encode()).hexdigest()[:32]


def _checked_gram(k, name):
    linalg.check_symmetric(k)
    k = linalg.symmetrize(k)
    lo = linalg.min_eigenvalue(k)
    if lo < -PSD_RTOL * np.linalg.norm(k, 2):
        logger.info("%s has min eigenvalue %.3e; treated as round-off and clipped", name, lo)
    return k, lo


def build_gram_bundle(data, kernel_z, kernel_w, contrast=None, cache_dir=None, compress=True):
    """Gram matrices on the sample; optionally cached as ``<cache_dir>/<key>.npz``."""
    cache_path = None
    if cache_dir is not None:
        try:
            key = gram_cache_key(data, kernel_z, kernel_w, contrast, compress)
        except ValueError:
            key = None  # contrasts built from Python callables have no stable key
        if key is not None:
            cache_path = os.path.join(cache_dir, key + ".npz")
            if os.path.exists(cache_path):
                logger.info("loading Gram bundle from %s", cache_path)
                return GramBundle.load(cache_path, kernel_z, kernel_w)
    z_set = distinct_points(data.z, data.a, data.x, compress=compress)
    w_set = distinct_points(data.w, data.a, data.x, compress=compress)
    k_z, lo_z = _checked_gram(kernel_z.gram(z_set.points, z_set.points), "K_z")
    k_w, lo_w = _checked_gram(kernel_w.gram(w_set.points, w_set.points), "K_w1")
    t_set = k_w2 = None
    if contrast is not None:
        contrast.check_compatible(data.actions)
        t_set = distinct_points(data.w, data.x, compress=compress)
        k_w2 = t_apply_kernel(kernel_w, contrast, w_set.points, t_set.points)
    info = {"min_eig": {"K_z": lo_z, "K_w1": lo_w}, "distinct": {"z": z_set.m, "w": w_set.m}}
    bundle = GramBundle(z_set, w_set, k_z, k_w, t_set, k_w2, kernel_z, kernel_w, info)
    if cache_path is not None:
        os.makedirs(cache_dir, exist_ok=True)
        bundle.save(cache_path)
    return bundle


def double_t_gram(kernel_w, contrast, data):
    """K_w3[i, j] with T applied to both arguments (the constant dropped from strategy I for q)."""
    nodes, _ = contrast.nodes()
    wts = contrast.node_weights(data.x)
    n = data.n
    out = np.zeros((n, n))
    for k, node in enumerate(nodes):
        anchor = (data.w, np.full(n, node), data.x)
        out += wts[:, k, None] * t_apply_kernel(kernel_w, contrast, anchor, (data.w, data.x))
    return out


# --------------------------------------------------------------------------
# hypothesis classes


@dataclass(frozen=True)
class SieveHypothesis:
    features: FeatureMap

    def to_dict(self):
        return {"type": "sieve", "features": self.features.to_dict()}


@dataclass(frozen=True)
class KernelHypothesis:
    """RKHS hypothesis with norm ridge ``rho``; ``kernel=None`` picks the median-heuristic product kernel."""

    kernel: KernelSpec = None
    rho: float = None

    def __post_init__(self):
        if self.rho is not None and not self.rho > 0:
            raise ConfigurationError("kernel hypotheses need rho > 0 for a unique dual solution")

    def to_dict(self):
        return {"type": "kernel", "kernel": None if self.kernel is None else self.kernel.to_dict(), "rho": self.rho}


def hypothesis_from_dict(d):
    if d["type"] == "sieve":
        return SieveHypothesis(feature_map_from_dict(d["features"]))
    if d["type"] == "kernel":
        kern = d.get("kernel")
        return KernelHypothesis(None if kern is None else kernel_from_dict(kern), d.get("rho"))
    raise ConfigurationError(f"unknown hypothesis type {d['type']!r}")


def default_rho(k_u, counts):
    """1e-3 * trace(K) / n for the full n x n Gram."""
    n = max(counts.sum(), 1.0)
    tr = float(np.diag(k_u) @ counts)
    return 1e-3 * tr / n if tr > 0 else 1e-3


def default_gamma(k_u, counts):
    n = max(counts.sum(), 1.0)
    tr = float(np.diag(k_u) @ counts)
    return 1e-4 * tr / n if tr > 0 else 1e-4


# --------------------------------------------------------------------------
# objectives on aggregated vectors


def _resolve(strategy, lam, gamma, k_u, counts):
    if strategy not in (1, 2):
        raise ConfigurationError("strategy must be 1 or 2")
    if strategy == 1:
        return None, None
    if lam is None or not lam > 0:
        raise ConfigurationError("strategy 2 needs lam > 0")
    if gamma is None:
        gamma = default_gamma(k_u, counts)
    if not gamma > 0:
        raise ConfigurationError("strategy 2 needs gamma > 0 so that gamma I + lam K is invertible")
    return float(lam), float(gamma)


def _check_definite(k, name):
    lo = linalg.min_eigenvalue(k)
    norm = np.linalg.norm(k, 2) if k.size else 0.0
    if lo < -INDEFINITE_RTOL * max(norm, 1e-300):
        raise ConditioningError(f"{name} is indefinite beyond round-off: min eigenvalue {lo:.3e} (norm {norm:.3e})")


def _solve_inner(k_u, counts, lam, gamma, rhs):
    """(gamma I + lam K_u C)^{-1} rhs."""
    m = k_u.shape[0]
    a = gamma * np.eye(m) + lam * k_u * counts[None, :]
    try:
        return np.linalg.solve(a, rhs)
    except np.linalg.LinAlgError as err:
        raise ConditioningError(f"gamma I + lam K C is singular (gamma={gamma:.3e})") from err


def _middle(k_u, counts, strategy, lam, gamma):
    """M_u with psi^T M psi = (E^T psi)^T M_u (E^T psi)."""
    n = max(counts.sum(), 1.0)
    if strategy == 1:
        return k_u / n**2
    # K_u (gamma I + lam C K_u)^{-1} = [(gamma I + lam K_u C)^{-1} K_u]^T
    g = _solve_inner(k_u, counts, lam, gamma, k_u).T
    return linalg.symmetrize(g) / (4.0 * n)


def h_weight(gram, strategy=2, lam=1.0, gamma=None):
    """M_u for the outcome bridge, acting on ``E_z^T psi``."""
    counts = gram.z_set.counts
    _check_definite(gram.K_z_u, "K_z")
    lam, gamma = _resolve(strategy, lam, gamma, gram.K_z_u, counts)
    return _middle(gram.K_z_u, counts, strategy, lam, gamma)


def q_weight(gram, strategy=2, lam=1.0, gamma=None):
    """(M_u, v_u) for the action bridge, acting on ``E_w^T phi``."""
    if gram.K_w2_u is None:
        raise ConfigurationError("the Gram bundle was built without a contrast; K_w2 is required for q")
    counts = gram.w_set.counts
    _check_definite(gram.K_w_u, "K_w1")
    n = max(counts.sum(), 1.0)
    t = gram.t_sums
    lam, gamma = _resolve(strategy, lam, gamma, gram.K_w_u, counts)
    m = _middle(gram.K_w_u, counts, strategy, lam, gamma)
    if strategy == 1:
        return m, t / n**2
    return m, _solve_inner(gram.K_w_u, counts, lam, gamma, t) / (4.0 * n)


def objective_h(gram, h_values, y, strategy=2, lam=1.0, gamma=None):
    """psi^T M psi for per-row bridge values ``h_values``."""
    s = gram.z_set.aggregate(np.asarray(y, float) - np.asarray(h_values, float))
    return float(s @ h_weight(gram, strategy, lam, gamma) @ s)


def objective_q(gram, q_values, pi, strategy=2, lam=1.0, gamma=None):
    """phi^T M phi - 2 phi^T v for per-row bridge values ``q_values``."""
    m, v = q_weight(gram, strategy, lam, gamma)
    r = gram.w_set.aggregate(np.asarray(pi, float) * np.asarray(q_values, float))
    return float(r @ m @ r - 2.0 * r @ v)


def explicit_sandwich(k, lam, gamma):
    """K^{1/2} (gamma I + lam K)^{-1} K^{1/2} computed literally (audit path, O(n^3))."""
    root = matrix_sqrt_psd(k)
    inner = gamma * np.eye(k.shape[0]) + lam * linalg.symmetrize(k)
    return linalg.symmetrize(root @ linalg.solve_psd(inner, root, jitter=gamma))


# --------------------------------------------------------------------------
# fitting


def _median_kernel(proxy, data):
    return default_product_kernel(proxy, data.a, data.x, discrete_actions=isinstance(data.actions, DiscreteActions))


def _kernel_rho(rho, hypothesis, k_u, counts):
    if rho is None:
        rho = hypothesis.rho
    if rho is None:
        return default_rho(k_u, counts)
    if not rho > 0:
        raise ConfigurationError("kernel hypotheses need rho > 0")
    return float(rho)


def _diag(strategy, lam, gamma, rho, n, objective):
    return {
        "family": "rkhs",
        "strategy": strategy,
        "lambda": lam if strategy == 2 else 0.0,
        "gamma": gamma,
        "rho": rho,
        "n": n,
        "objective": objective,
    }


def fit_h_kernel(data, gram, hypothesis, strategy=2, lam=1.0, gamma=None, rho=None):
    """Outcome bridge minimizing ``(Y - h)^T M (Y - h)`` (+ ridge) over the hypothesis class."""
    m = h_weight(gram, strategy, lam, gamma)
    if strategy == 2 and gamma is None:
        gamma = default_gamma(gram.K_z_u, gram.z_set.counts)
    zs = gram.z_set
    y_agg = zs.aggregate(data.y)
    point = (data.w, data.a, data.x)
    if isinstance(hypothesis, SieveHypothesis):
        psi = zs.aggregate(hypothesis.features(*point))
        rho = 0.0 if rho is None else float(rho)
        lhs = psi.T @ m @ psi + rho * np.eye(psi.shape[1])
        coef = linalg.pinv(linalg.symmetrize(lhs)) @ (psi.T @ m @ y_agg)
        s = y_agg - psi @ coef
        desc = SieveDescriptor(coef, hypothesis.features)
    elif isinstance(hypothesis, KernelHypothesis):
        kern = hypothesis.kernel or _median_kernel(data.w, data)
        hs = distinct_points(*point)
        k_h = linalg.symmetrize(kern.gram(hs.points, hs.points))
        rho = _kernel_rho(rho, hypothesis, k_h, hs.counts)
        cross = zs.cross(hs)
        beta = np.linalg.solve(cross.T @ m @ cross @ k_h + rho * np.eye(hs.m), cross.T @ m @ y_agg)
        s = y_agg - cross @ (k_h @ beta)
        desc = KernelDescriptor(beta, hs.points, kern)
    else:
        raise ConfigurationError(f"unsupported hypothesis {hypothesis!r}")
    diag = _diag(strategy, lam, gamma, rho, data.n, float(s @ m @ s))
    return BridgeFit("outcome", desc, data.actions, diag)


def fit_q_kernel(data, gram, hypothesis, contrast, strategy=2, lam=1.0, gamma=None, rho=None):
    """Action bridge minimizing ``phi^T M phi - 2 phi^T v`` (+ ridge), ``phi = pi q``."""
    contrast.check_compatible(data.actions)
    m, v = q_weight(gram, strategy, lam, gamma)
    if strategy == 2 and gamma is None:
        gamma = default_gamma(gram.K_w_u, gram.w_set.counts)
    ws = gram.w_set
    pi = contrast(data.a, data.x)
    point = (data.z, data.a, data.x)
    if isinstance(hypothesis, SieveHypothesis):
        g = ws.aggregate(pi[:, None] * hypothesis.features(*point))
        rho = 0.0 if rho is None else float(rho)
        lhs = g.T @ m @ g + rho * np.eye(g.shape[1])
        coef = linalg.pinv(linalg.symmetrize(lhs)) @ (g.T @ v)
        r = g @ coef
        desc = SieveDescriptor(coef, hypothesis.features)
    elif isinstance(hypothesis, KernelHypothesis):
        kern = hypothesis.kernel or _median_kernel(data.z, data)
        qs = distinct_points(*point)
        k_q = linalg.symmetrize(kern.gram(qs.points, qs.points))
        rho = _kernel_rho(rho, hypothesis, k_q, qs.counts)
        cross = ws.cross(qs, weights=pi)
        beta = np.linalg.solve(cross.T @ m @ cross @ k_q + rho * np.eye(qs.m), cross.T @ v)
        r = cross @ (k_q @ beta)
        desc = KernelDescriptor(beta, qs.points, kern)
    else:
        raise ConfigurationError(f"unsupported hypothesis {hypothesis!r}")
    diag = _diag(strategy, lam, gamma, rho, data.n, float(r @ m @ r - 2.0 * r @ v))
    return BridgeFit("action", desc, data.actions, diag)


# --------------------------------------------------------------------------
# configuration used by the estimators and the CLI


@dataclass(frozen=True)
class RKHSConfig:
    """Kernel critics (None = median-heuristic product kernels) and hypothesis classes for both bridges."""

    h_hypothesis: object
    q_hypothesis: object
    kernel_z: KernelSpec = None
    kernel_w: KernelSpec = None
    strategy: int = 2
    lam: float = 1.0
    gamma: float = None
    rho: float = None

    def __post_init__(self):
        if self.strategy not in (1, 2):
            raise ConfigurationError("strategy must be 1 or 2")
        if self.strategy == 2 and not self.lam > 0:
            raise ConfigurationError("strategy 2 needs lambda > 0")
        if self.strategy == 2 and self.gamma is not None and not self.gamma > 0:
            raise ConfigurationError("strategy 2 needs gamma > 0")

    def kernels_for(self, data):
        kz = self.kernel_z or _median_kernel(data.z, data)
        kw = self.kernel_w or _median_kernel(data.w, data)
        return kz, kw

    def gram(self, data, contrast=None, cache_dir=None):
        kz, kw = self.kernels_for(data)
        return build_gram_bundle(data, kz, kw, contrast, cache_dir=cache_dir)

    def fit_h(self, data, gram=None):
        gram = gram or self.gram(data)
        return fit_h_kernel(data, gram, self.h_hypothesis, self.strategy, self.lam, self.gamma, self.rho)

    def fit_q(self, data, contrast, gram=None):
        if gram is None or gram.K_w2_u is None:
            gram = self.gram(data, contrast)
        return fit_q_kernel(data, gram, self.q_hypothesis, contrast, self.strategy, self.lam, self.gamma, self.rho)

    def to_dict(self):
        return {
            "family": "rkhs",
            "strategy": self.strategy,
            "lambda": self.lam,
            "gamma": self.gamma,
            "rho": self.rho,
            "kernel_z": None if self.kernel_z is None else self.kernel_z.to_dict(),
            "kernel_w": None if self.kernel_w is None else self.kernel_w.to_dict(),
            "h_hypothesis": self.h_hypothesis.to_dict(),
            "q_hypothesis": self.q_hypothesis.to_dict(),
        }

    @classmethod
    def from_dict(cls, d):
        kz, kw = d.get("kernel_z"), d.get("kernel_w")
        strategy = int(d.get("strategy", 2))
        return cls(
            hypothesis_from_dict(d["h_hypothesis"]),
            hypothesis_from_dict(d["q_hypothesis"]),
            None if kz is None else kernel_from_dict(kz),
            None if kw is None else kernel_from_dict(kw),
            strategy,
            float(d.get("lambda", 1.0 if strategy == 2 else 0.0)),
            None if d.get("gamma") is None else float(d["gamma"]),
            None if d.get("rho") is None else float(d["rho"]),
        )
