"""Basis functions for linear hypothesis and critic classes.

Every feature map reads a subset of the three blocks ``proxy`` (w or z),
``action`` and ``x`` and returns an ``(n, dim)`` design matrix. Maps are
plain frozen dataclasses so they pickle and serialize to JSON dicts.
"""

from dataclasses import dataclass
from itertools import combinations_with_replacement

import numpy as np
from scipy.interpolate import BSpline

BLOCKS = ("proxy", "action", "x")

_REGISTRY = {}


def _register(cls):
    _REGISTRY[cls.__name__] = cls
    return cls


def _as_inputs(proxy, a, x):
    a = np.asarray(a)
    n = a.shape[0]
    proxy = np.asarray(proxy, dtype=float).reshape(n, -1)
    x = np.asarray(x, dtype=float).reshape(n, -1)
    return proxy, a, x


def _stack(proxy, a, x, blocks):
    cols = []
    for block in blocks:
        if block == "proxy":
            cols.append(proxy)
        elif block == "action":
            cols.append(np.asarray(a, dtype=float).reshape(-1, 1))
        elif block == "x":
            cols.append(x)
        else:
            raise ValueError(f"unknown block {block!r}")
    if not cols:
        return np.zeros((proxy.shape[0], 0))
    return np.hstack(cols)


class FeatureMap:
    """Base class; subclasses define ``dim`` and ``_design``."""

    name = "feature-map"

    def __call__(self, proxy, a, x):
        proxy, a, x = _as_inputs(proxy, a, x)
        out = self._design(proxy, a, x)
        return np.ascontiguousarray(out, dtype=float)

    def to_dict(self):
        raise NotImplementedError


def feature_map_from_dict(d):
    d = dict(d)
    kind = d.pop("type")
    cls = _REGISTRY.get(kind)
    if cls is None:
        raise ValueError(f"unknown feature map type {kind!r}")
    return cls._from_dict(d)


@_register
@dataclass(frozen=True)
class ConstantFeatures(FeatureMap):
    name = "constant"

    @property
    def dim(self):
        return 1

    @property
    def blocks(self):
        return ()

    def _design(self, proxy, a, x):
        return np.ones((proxy.shape[0], 1))

    def to_dict(self):
        return {"type": "ConstantFeatures"}

    @classmethod
    def _from_dict(cls, d):
        return cls()


@_register
@dataclass(frozen=True)
class IndicatorFeatures(FeatureMap):
    """One-hot encoding of the joint cell of integer-coded columns.

    ``proxy_levels`` and ``x_levels`` give the cardinality of each column;
    ``n_actions`` the size of the discrete action support. Passing ``None``
    drops the block, e.g. ``IndicatorFeatures(None, 2, (3,))`` ignores the
    proxy entirely. Cells are ordered row-major over (proxy, action, x).
    """

    proxy_levels: tuple = None
    n_actions: int = None
    x_levels: tuple = None

    name = "saturated-indicator"

    def __post_init__(self):
        if self.proxy_levels is not None:
            object.__setattr__(self, "proxy_levels", tuple(int(v) for v in self.proxy_levels))
        if self.x_levels is not None:
            object.__setattr__(self, "x_levels", tuple(int(v) for v in self.x_levels))
        if self.n_actions is not None:
            object.__setattr__(self, "n_actions", int(self.n_actions))

    @property
    def shape(self):
        shape = []
        if self.proxy_levels is not None:
            shape.extend(self.proxy_levels)
        if self.n_actions is not None:
            shape.append(self.n_actions)
        if self.x_levels is not None:
            shape.extend(self.x_levels)
        return tuple(shape)

    @property
    def dim(self):
        return int(np.prod(self.shape, dtype=int))

    @property
    def blocks(self):
        return tuple(
            b
            for b, lv in zip(BLOCKS, (self.proxy_levels, self.n_actions, self.x_levels))
            if lv is not None
        )

    def cell_index(self, proxy, a, x):
        proxy, a, x = _as_inputs(proxy, a, x)
        codes = []
        if self.proxy_levels is not None:
            codes.extend(proxy[:, j] for j in range(len(self.proxy_levels)))
        if self.n_actions is not None:
            codes.append(a)
        if self.x_levels is not None:
            codes.extend(x[:, j] for j in range(len(self.x_levels)))
        n = a.shape[0]
        if not codes:
            return np.zeros(n, dtype=int)
        int_codes = []
        for c, size in zip(codes, self.shape):
            c = np.asarray(c)
            ci = np.rint(c).astype(int)
            if np.any(np.abs(c - ci) > 0) or np.any(ci < 0) or np.any(ci >= size):
                raise ValueError(f"indicator codes must be integers in [0, {size})")
            int_codes.append(ci)
        return np.ravel_multi_index(tuple(int_codes), self.shape)

    def _design(self, proxy, a, x):
        idx = self.cell_index(proxy, a, x)
        out = np.zeros((idx.shape[0], self.dim))
        out[np.arange(idx.shape[0]), idx] = 1.0
        return out

    def to_dict(self):
        return {
            "type": "IndicatorFeatures",
            "proxy_levels": None if self.proxy_levels is None else list(self.proxy_levels),
            "n_actions": self.n_actions,
            "x_levels": None if self.x_levels is None else list(self.x_levels),
        }

    @classmethod
    def _from_dict(cls, d):
        return cls(d.get("proxy_levels"), d.get("n_actions"), d.get("x_levels"))


@_register
@dataclass(frozen=True)
class PolynomialFeatures(FeatureMap):
    """All monomials of total degree <= ``degree`` in the selected columns.

    ``n_columns`` is the number of input columns after stacking ``blocks``
    (the action counts as one column). The constant monomial comes first.
    """

    degree: int
    n_columns: int
    blocks: tuple = BLOCKS

    name = "polynomial"

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(self.blocks))
        if self.degree < 0:
            raise ValueError("degree must be non-negative")

    @property
    def exponents(self):
        terms = []
        for deg in range(self.degree + 1):
            terms.extend(combinations_with_replacement(range(self.n_columns), deg))
        return terms

    @property
    def dim(self):
        return len(self.exponents)

    def _design(self, proxy, a, x):
        cols = _stack(proxy, a, x, self.blocks)
        if cols.shape[1] != self.n_columns:
            raise ValueError(f"expected {self.n_columns} input columns, got {cols.shape[1]}")
        out = np.ones((cols.shape[0], self.dim))
        for k, term in enumerate(self.exponents):
            for j in term:
                out[:, k] *= cols[:, j]
        return out

    def to_dict(self):
        return {
            "type": "PolynomialFeatures",
            "degree": self.degree,
            "n_columns": self.n_columns,
            "blocks": list(self.blocks),
        }

    @classmethod
    def _from_dict(cls, d):
        return cls(int(d["degree"]), int(d["n_columns"]), tuple(d.get("blocks", BLOCKS)))


@_register
@dataclass(frozen=True)
class SplineFeatures(FeatureMap):
    """Tensor product of per-column B-spline bases.

    ``knots`` holds one increasing knot vector per input column, boundary
    knots included; inputs outside the boundary are clamped onto it.
    """

    knots: tuple
    degree: int = 1
    blocks: tuple = BLOCKS

    name = "tensor-spline"

    def __post_init__(self):
        knots = tuple(tuple(float(v) for v in k) for k in self.knots)
        for k in knots:
            if len(k) < 2 or np.any(np.diff(k) <= 0):
                raise ValueError("each knot vector needs >= 2 strictly increasing values")
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "blocks", tuple(self.blocks))

    def _full_knots(self, k):
        k = np.asarray(k)
        return np.concatenate([np.repeat(k[0], self.degree), k, np.repeat(k[-1], self.degree)])

    @property
    def sizes(self):
        return tuple(len(k) + self.degree - 1 for k in self.knots)

    @property
    def dim(self):
        return int(np.prod(self.sizes, dtype=int))

    def _design(self, proxy, a, x):
        cols = _stack(proxy, a, x, self.blocks)
        if cols.shape[1] != len(self.knots):
            raise ValueError(f"expected {len(self.knots)} input columns, got {cols.shape[1]}")
        out = np.ones((cols.shape[0], 1))
        for j, k in enumerate(self.knots):
            t = self._full_knots(k)
            v = np.clip(cols[:, j], k[0], k[-1])
            basis = BSpline.design_matrix(v, t, self.degree, extrapolate=False).toarray()
            out = (out[:, :, None] * basis[:, None, :]).reshape(cols.shape[0], -1)
        return out

    def to_dict(self):
        return {
            "type": "SplineFeatures",
            "knots": [list(k) for k in self.knots],
            "degree": self.degree,
            "blocks": list(self.blocks),
        }

    @classmethod
    def _from_dict(cls, d):
        return cls(tuple(tuple(k) for k in d["knots"]), int(d.get("degree", 1)), tuple(d.get("blocks", BLOCKS)))


@_register
@dataclass(frozen=True)
class ProductFeatures(FeatureMap):
    """Row-wise Kronecker product, e.g. polynomial(proxy, x) times action indicators."""

    left: FeatureMap
    right: FeatureMap

    name = "product"

    @property
    def dim(self):
        return self.left.dim * self.right.dim

    @property
    def blocks(self):
        return tuple(b for b in BLOCKS if b in self.left.blocks or b in self.right.blocks)

    def _design(self, proxy, a, x):
        left = self.left(proxy, a, x)
        right = self.right(proxy, a, x)
        return (left[:, :, None] * right[:, None, :]).reshape(left.shape[0], -1)

    def to_dict(self):
        return {"type": "ProductFeatures", "left": self.left.to_dict(), "right": self.right.to_dict()}

    @classmethod
    def _from_dict(cls, d):
        return cls(feature_map_from_dict(d["left"]), feature_map_from_dict(d["right"]))


@_register
@dataclass(frozen=True)
class ScaledFeatures(FeatureMap):
    """``scale * base``; used to check scale equivariance of the estimators."""

    base: FeatureMap
    scale: float

    @property
    def dim(self):
        return self.base.dim

    @property
    def blocks(self):
        return self.base.blocks

    def _design(self, proxy, a, x):
        return self.scale * self.base(proxy, a, x)

    def to_dict(self):
        return {"type": "ScaledFeatures", "base": self.base.to_dict(), "scale": self.scale}

    @classmethod
    def _from_dict(cls, d):
        return cls(feature_map_from_dict(d["base"]), float(d["scale"]))
