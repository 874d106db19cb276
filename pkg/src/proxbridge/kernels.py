"""Positive semidefinite kernels on (proxy, action, x) points.

A point set is a triple ``(proxy, a, x)`` of arrays with a common leading
dimension. ``kernel.gram(left, right)`` returns the cross Gram matrix.
"""

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist, pdist

from .features import BLOCKS, FeatureMap, _as_inputs, _stack, feature_map_from_dict

_REGISTRY = {}


def _register(cls):
    _REGISTRY[cls.__name__] = cls
    return cls


def kernel_from_dict(d):
    d = dict(d)
    kind = d.pop("type")
    cls = _REGISTRY.get(kind)
    if cls is None:
        raise ValueError(f"unknown kernel type {kind!r}")
    return cls._from_dict(d)


class KernelSpec:
    def gram(self, left, right):
        left = _as_inputs(*left)
        right = _as_inputs(*right)
        return self._gram(left, right)

    def __call__(self, left, right):
        return self.gram(left, right)

    def to_dict(self):
        raise NotImplementedError


@_register
@dataclass(frozen=True)
class RBFKernel(KernelSpec):
    """exp(-|u - v|^2 / (2 bandwidth^2)) on the stacked ``blocks`` columns."""

    bandwidth: float
    blocks: tuple = BLOCKS

    def __post_init__(self):
        if not self.bandwidth > 0:
            raise ValueError("bandwidth must be positive")
        object.__setattr__(self, "blocks", tuple(self.blocks))

    def _gram(self, left, right):
        u = _stack(*left, self.blocks)
        v = _stack(*right, self.blocks)
        d2 = cdist(u, v, "sqeuclidean") if u.shape[1] else np.zeros((u.shape[0], v.shape[0]))
        return np.exp(-d2 / (2.0 * self.bandwidth**2))

    def to_dict(self):
        return {"type": "RBFKernel", "bandwidth": self.bandwidth, "blocks": list(self.blocks)}

    @classmethod
    def _from_dict(cls, d):
        return cls(float(d["bandwidth"]), tuple(d.get("blocks", BLOCKS)))


@_register
@dataclass(frozen=True)
class PolynomialKernel(KernelSpec):
    degree: int = 2
    offset: float = 1.0
    blocks: tuple = BLOCKS

    def __post_init__(self):
        if self.offset < 0:
            raise ValueError("offset must be non-negative for a PSD kernel")
        object.__setattr__(self, "blocks", tuple(self.blocks))

    def _gram(self, left, right):
        u = _stack(*left, self.blocks)
        v = _stack(*right, self.blocks)
        return (u @ v.T + self.offset) ** self.degree

    def to_dict(self):
        return {"type": "PolynomialKernel", "degree": self.degree, "offset": self.offset, "blocks": list(self.blocks)}

    @classmethod
    def _from_dict(cls, d):
        return cls(int(d.get("degree", 2)), float(d.get("offset", 1.0)), tuple(d.get("blocks", BLOCKS)))


@_register
@dataclass(frozen=True)
class ExactMatchKernel(KernelSpec):
    """1 when the selected columns agree exactly, else 0 (discrete blocks)."""

    blocks: tuple = ("action",)

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(self.blocks))

    def _gram(self, left, right):
        u = _stack(*left, self.blocks)
        v = _stack(*right, self.blocks)
        if u.shape[1] == 0:
            return np.ones((u.shape[0], v.shape[0]))
        return np.all(u[:, None, :] == v[None, :, :], axis=2).astype(float)

    def to_dict(self):
        return {"type": "ExactMatchKernel", "blocks": list(self.blocks)}

    @classmethod
    def _from_dict(cls, d):
        return cls(tuple(d.get("blocks", ("action",))))


@_register
@dataclass(frozen=True)
class ConstantKernel(KernelSpec):
    value: float = 1.0

    def _gram(self, left, right):
        return np.full((left[1].shape[0], right[1].shape[0]), float(self.value))

    def to_dict(self):
        return {"type": "ConstantKernel", "value": self.value}

    @classmethod
    def _from_dict(cls, d):
        return cls(float(d.get("value", 1.0)))


@_register
@dataclass(frozen=True)
class FeatureKernel(KernelSpec):
    """Linear kernel phi(u)^T phi(v) induced by a feature map."""

    features: FeatureMap

    def _gram(self, left, right):
        return self.features(*left) @ self.features(*right).T

    def to_dict(self):
        return {"type": "FeatureKernel", "features": self.features.to_dict()}

    @classmethod
    def _from_dict(cls, d):
        return cls(feature_map_from_dict(d["features"]))


@_register
@dataclass(frozen=True)
class ProductKernel(KernelSpec):
    factors: tuple

    def __post_init__(self):
        object.__setattr__(self, "factors", tuple(self.factors))

    def _gram(self, left, right):
        out = np.ones((left[1].shape[0], right[1].shape[0]))
        for k in self.factors:
            out = out * k._gram(left, right)
        return out

    def to_dict(self):
        return {"type": "ProductKernel", "factors": [k.to_dict() for k in self.factors]}

    @classmethod
    def _from_dict(cls, d):
        return cls(tuple(kernel_from_dict(k) for k in d["factors"]))


def median_bandwidth(columns, max_rows=2000, seed=0):
    """Median pairwise Euclidean distance, on a seeded subsample of at most ``max_rows``."""
    columns = np.asarray(columns, dtype=float)
    if columns.ndim == 1:
        columns = columns[:, None]
    if columns.shape[0] > max_rows:
        rng = np.random.default_rng(seed)
        columns = columns[rng.choice(columns.shape[0], max_rows, replace=False)]
    if columns.shape[0] < 2 or columns.shape[1] == 0:
        return 1.0
    med = float(np.median(pdist(columns)))
    return med if med > 0 else 1.0


def default_product_kernel(proxy, a, x, discrete_actions=True, max_rows=2000):
    """RBF on proxy and x blocks (median heuristic each) times an action kernel.

    Discrete actions get the exact-match kernel, continuous ones an RBF.
    """
    proxy, a, x = _as_inputs(proxy, a, x)
    factors = []
    if proxy.shape[1]:
        factors.append(RBFKernel(median_bandwidth(proxy, max_rows), ("proxy",)))
    if discrete_actions:
        factors.append(ExactMatchKernel(("action",)))
    else:
        factors.append(RBFKernel(median_bandwidth(np.asarray(a, float), max_rows), ("action",)))
    if x.shape[1]:
        factors.append(RBFKernel(median_bandwidth(x, max_rows), ("x",)))
    return ProductKernel(tuple(factors))
