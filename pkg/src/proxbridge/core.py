"""Observation storage, contrast functions, fitted bridges and the T-operator.

The T-operator integrates a function of ``(w, a, x)`` over actions against
the contrast: ``(T h)(w, x) = sum_k weight_k * pi(a_k | x) * h(w, a_k, x)``,
where the nodes are the whole support for discrete actions (counting
measure) or caller-supplied quadrature nodes for continuous ones.
"""

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from .errors import ConfigurationError
from .features import FeatureMap, feature_map_from_dict
from .kernels import KernelSpec, kernel_from_dict


# --------------------------------------------------------------------------
# action supports


@dataclass(frozen=True)
class DiscreteActions:
    """Finite support; observations store the index into ``support``."""

    support: tuple

    kind = "discrete"

    def __post_init__(self):
        object.__setattr__(self, "support", tuple(float(v) for v in self.support))
        if len(self.support) == 0:
            raise ValueError("discrete action support must be non-empty")
        if len(set(self.support)) != len(self.support):
            raise ValueError("discrete action support has duplicate values")

    @property
    def size(self):
        return len(self.support)

    def to_dict(self):
        return {"kind": "discrete", "support": list(self.support)}


@dataclass(frozen=True)
class ContinuousActions:
    low: float = -np.inf
    high: float = np.inf

    kind = "continuous"

    def to_dict(self):
        return {"kind": "continuous", "low": self.low, "high": self.high}


def actions_from_dict(d):
    if d["kind"] == "discrete":
        return DiscreteActions(tuple(d["support"]))
    if d["kind"] == "continuous":
        return ContinuousActions(float(d.get("low", -np.inf)), float(d.get("high", np.inf)))
    raise ValueError(f"unknown action kind {d['kind']!r}")


# --------------------------------------------------------------------------
# observations


def _as_block(arr, n):
    arr = np.asarray(arr, dtype=float)
    if arr.ndim == 2 and arr.shape[0] == n:
        return arr
    if n == 0:
        return arr.reshape(0, arr.shape[1] if arr.ndim == 2 else 0)
    return arr.reshape(n, -1)


def _readonly(arr):
    arr = np.array(arr, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class ObservationTable:
    """n i.i.d. records (y, w, z, a, x).

    ``w``, ``z`` and ``x`` are 2-D (possibly zero columns). For discrete
    actions ``a`` holds integer indices into ``actions.support``; for
    continuous actions it holds the action values.
    """

    y: np.ndarray
    w: np.ndarray
    z: np.ndarray
    a: np.ndarray
    x: np.ndarray
    actions: object

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float).reshape(-1)
        n = y.shape[0]
        w, z, x = (_as_block(v, n) for v in (self.w, self.z, self.x))
        a = np.asarray(self.a).reshape(-1)
        if a.shape[0] != n:
            raise ValueError(f"action column has {a.shape[0]} rows, expected {n}")
        if isinstance(self.actions, DiscreteActions):
            ai = np.rint(a).astype(np.int64) if a.size else a.astype(np.int64)
            if a.size and (np.any(ai != a) or ai.min() < 0 or ai.max() >= self.actions.size):
                raise ValueError(f"discrete action indices must lie in [0, {self.actions.size})")
            a = ai
        elif isinstance(self.actions, ContinuousActions):
            a = a.astype(float)
            if a.size and (a.min() < self.actions.low or a.max() > self.actions.high):
                raise ValueError("continuous actions fall outside the declared range")
        else:
            raise TypeError("actions must be DiscreteActions or ContinuousActions")
        for name, arr in (("y", y), ("w", w), ("z", z), ("x", x)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"column block {name!r} contains non-finite values")
        for name, arr in (("y", y), ("w", w), ("z", z), ("a", a), ("x", x)):
            object.__setattr__(self, name, _readonly(arr))

    @property
    def n(self):
        return self.y.shape[0]

    @property
    def p_w(self):
        return self.w.shape[1]

    @property
    def p_z(self):
        return self.z.shape[1]

    @property
    def d_x(self):
        return self.x.shape[1]

    def __len__(self):
        return self.n

    def subset(self, idx):
        idx = np.asarray(idx)
        return ObservationTable(self.y[idx], self.w[idx], self.z[idx], self.a[idx], self.x[idx], self.actions)

    def action_values(self):
        if isinstance(self.actions, DiscreteActions):
            return np.asarray(self.actions.support)[self.a]
        return self.a

    def dims(self):
        return {"p_w": self.p_w, "p_z": self.p_z, "d_x": self.d_x, "actions": self.actions.to_dict()}

    def columns(self):
        return (
            ["y"]
            + [f"w_{j + 1}" for j in range(self.p_w)]
            + [f"z_{j + 1}" for j in range(self.p_z)]
            + ["a"]
            + [f"x_{j + 1}" for j in range(self.d_x)]
        )

    def to_csv(self, path, sidecar=None):
        """Write ``y,w_*,z_*,a,x_*`` rows plus a JSON sidecar holding the dimensions."""
        path = Path(path)
        sidecar = Path(sidecar) if sidecar else sidecar_path(path)
        vals = self.action_values()
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(self.columns())
            for i in range(self.n):
                row = [self.y[i], *self.w[i], *self.z[i], vals[i], *self.x[i]]
                writer.writerow([repr(float(v)) for v in row])
        with open(sidecar, "w") as fh:
            json.dump(self.dims(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        return path, sidecar

    @classmethod
    def from_csv(cls, path, sidecar=None):
        path = Path(path)
        sidecar = Path(sidecar) if sidecar else sidecar_path(path)
        with open(sidecar) as fh:
            dims = json.load(fh)
        for key in ("p_w", "p_z", "d_x", "actions"):
            if key not in dims:
                raise ConfigurationError(f"sidecar {sidecar} is missing key {key!r}")
        actions = actions_from_dict(dims["actions"])
        probe = ObservationTable(np.zeros(0), np.zeros((0, dims["p_w"])), np.zeros((0, dims["p_z"])),
                                 np.zeros(0), np.zeros((0, dims["d_x"])), actions)
        expected = probe.columns()
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise ConfigurationError(f"{path} is empty; expected header {','.join(expected)}")
            missing = [c for c in expected if c not in header]
            if missing:
                raise ConfigurationError(f"{path} is missing column(s): {', '.join(missing)}")
            extra = [c for c in header if c not in expected]
            if extra:
                raise ConfigurationError(f"{path} has unexpected column(s): {', '.join(extra)}")
            order = [header.index(c) for c in expected]
            rows = [[float(r[j]) for j in order] for r in reader if r]
        data = np.array(rows, dtype=float).reshape(-1, len(expected))
        pw, pz = dims["p_w"], dims["p_z"]
        y = data[:, 0]
        w = data[:, 1:1 + pw]
        z = data[:, 1 + pw:1 + pw + pz]
        a = data[:, 1 + pw + pz]
        x = data[:, 2 + pw + pz:]
        if isinstance(actions, DiscreteActions):
            lookup = {v: i for i, v in enumerate(actions.support)}
            try:
                a = np.array([lookup[v] for v in a], dtype=np.int64)
            except KeyError as exc:
                raise ConfigurationError(f"action value {exc.args[0]} is not in the declared support")
        return cls(y, w, z, a, x, actions)


def sidecar_path(csv_path):
    csv_path = Path(csv_path)
    return csv_path.with_name(csv_path.stem + ".dims.json")


# --------------------------------------------------------------------------
# contrasts


@dataclass(frozen=True)
class Quadrature:
    nodes: tuple
    weights: tuple

    def __post_init__(self):
        nodes = tuple(float(v) for v in self.nodes)
        weights = tuple(float(v) for v in self.weights)
        if len(nodes) != len(weights) or not nodes:
            raise ValueError("quadrature needs matching, non-empty nodes and weights")
        if any(not w > 0 for w in weights):
            raise ValueError("quadrature weights must be positive")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)


@dataclass(frozen=True, eq=False)
class ContrastSpec:
    """Contrast pi(a | x) together with the integration rule over actions.

    ``pi(a, x)`` is vectorized: ``a`` of shape (n,) and ``x`` of shape
    (n, d_x), returning shape (n,). For discrete actions ``a`` carries
    support indices. ``integration`` is a ``DiscreteActions`` (counting
    measure over its support) or a ``Quadrature``.
    """

    pi: object
    integration: object
    name: str = "custom"
    params: dict = field(default_factory=dict)

    @property
    def discrete(self):
        return isinstance(self.integration, DiscreteActions)

    def nodes(self):
        """Action arguments passed to ``pi`` and to bridges at each node, and the measure weights."""
        if self.discrete:
            k = self.integration.size
            return np.arange(k), np.ones(k)
        return np.asarray(self.integration.nodes), np.asarray(self.integration.weights)

    def __call__(self, a, x):
        a = np.asarray(a)
        x = np.asarray(x, dtype=float).reshape(a.shape[0], -1)
        out = np.asarray(self.pi(a, x), dtype=float)
        if out.shape != a.shape:
            out = np.broadcast_to(out, a.shape).copy()
        if not np.all(np.isfinite(out)):
            raise ValueError(f"contrast {self.name!r} produced non-finite values")
        return out

    def node_weights(self, x):
        """(n, K) matrix of ``weight_k * pi(a_k | x_i)``."""
        x = np.asarray(x, dtype=float)
        n = x.shape[0]
        nodes, weights = self.nodes()
        out = np.empty((n, nodes.shape[0]))
        for k, (node, wk) in enumerate(zip(nodes, weights)):
            out[:, k] = wk * self(np.full(n, node), x)
        return out

    def check_compatible(self, actions):
        if self.discrete:
            if not isinstance(actions, DiscreteActions):
                raise ConfigurationError("discrete integration rule used with continuous actions")
            if actions.size != self.integration.size:
                raise ConfigurationError(
                    f"contrast support has {self.integration.size} actions, data has {actions.size}"
                )
        elif not isinstance(actions, ContinuousActions):
            raise ConfigurationError("quadrature integration rule used with discrete actions")

    def to_dict(self):
        if self.name == "custom":
            raise ValueError("custom contrasts built from Python callables cannot be serialized")
        return {"name": self.name, **self.params}


class _AteFn:
    def __call__(self, a, x):
        return 2.0 * np.asarray(a, dtype=float) - 1.0


class _TableFn:
    def __init__(self, table):
        self.table = np.array(table, dtype=float)
        self.table.setflags(write=False)

    def __call__(self, a, x):
        a = np.asarray(a, dtype=int)
        if self.table.shape[0] == 1:
            return self.table[0, a]
        code = np.rint(np.asarray(x)[:, 0]).astype(int)
        return self.table[code, a]


class _UniformDensityFn:
    def __init__(self, low, high):
        if not high > low:
            raise ValueError("uniform policy needs high > low")
        self.low, self.high = float(low), float(high)

    def __call__(self, a, x):
        a = np.asarray(a, dtype=float)
        return np.where((a >= self.low) & (a <= self.high), 1.0 / (self.high - self.low), 0.0)


class _NormalDensityFn:
    def __init__(self, mean, sd, x_coef):
        self.mean, self.sd = float(mean), float(sd)
        self.coef = np.asarray(x_coef, dtype=float)

    def __call__(self, a, x):
        loc = self.mean
        if self.coef.size:
            loc = loc + np.asarray(x)[:, : self.coef.size] @ self.coef
        return stats.norm.pdf(np.asarray(a, dtype=float), loc=loc, scale=self.sd)


def ate_binary(support=(0.0, 1.0)):
    """pi(a | x) = 2a - 1 on binary actions: the average treatment effect."""
    actions = DiscreteActions(tuple(support))
    if actions.size != 2:
        raise ValueError("ate_binary needs exactly two actions")
    return ContrastSpec(_AteFn(), actions, "ate_binary", {"support": list(actions.support)})


def policy_table(table, support=None):
    """Contrast given by a table ``table[x_code][a]``.

    A single-row table is used for every x; otherwise the first covariate
    column is read as an integer code selecting the row.
    """
    table = np.atleast_2d(np.asarray(table, dtype=float))
    if not np.all(np.isfinite(table)):
        raise ValueError("policy table has non-finite entries")
    if support is None:
        support = tuple(range(table.shape[1]))
    actions = DiscreteActions(tuple(support))
    if actions.size != table.shape[1]:
        raise ValueError("policy table width must equal the action support size")
    return ContrastSpec(_TableFn(table), actions, "policy_table",
                        {"table": table.tolist(), "support": list(actions.support)})


def _policy_density(policy):
    family = policy.get("family", "uniform")
    if family == "uniform":
        return _UniformDensityFn(policy["low"], policy["high"])
    if family == "normal":
        return _NormalDensityFn(policy.get("mean", 0.0), policy.get("sd", 1.0), policy.get("x_coef", []))
    raise ValueError(f"unknown policy family {family!r}")


def quadrature_contrast(nodes, weights, policy):
    """Continuous-action contrast integrated with fixed nodes and weights.

    ``policy`` is ``{"family": "uniform", "low", "high"}`` or
    ``{"family": "normal", "mean", "sd", "x_coef"}``.
    """
    rule = Quadrature(tuple(nodes), tuple(weights))
    pi = _policy_density(policy)
    params = {"nodes": list(rule.nodes), "weights": list(rule.weights), "policy": dict(policy)}
    return ContrastSpec(pi, rule, "quadrature", params)


def uniform_policy_contrast(low, high, n_nodes=8):
    """Uniform policy density on [low, high] with Gauss-Legendre nodes."""
    t, wt = np.polynomial.legendre.leggauss(n_nodes)
    half = 0.5 * (high - low)
    nodes = low + half * (t + 1.0)
    return quadrature_contrast(nodes, wt * half, {"family": "uniform", "low": low, "high": high})


def contrast_from_dict(d):
    d = dict(d)
    name = d.pop("name")
    if name == "ate_binary":
        return ate_binary(tuple(d.get("support", (0.0, 1.0))))
    if name == "policy_table":
        return policy_table(d["table"], d.get("support"))
    if name == "quadrature":
        return quadrature_contrast(d["nodes"], d["weights"], d["policy"])
    raise ValueError(f"unknown contrast {name!r}")


# --------------------------------------------------------------------------
# fitted bridges


@dataclass(frozen=True, eq=False)
class SieveDescriptor:
    """Linear-in-features bridge: ``features(proxy, a, x) @ coef``."""

    coef: np.ndarray
    features: FeatureMap

    def __post_init__(self):
        coef = np.asarray(self.coef, dtype=float).reshape(-1)
        if coef.shape[0] != self.features.dim:
            raise ValueError(f"{coef.shape[0]} coefficients for a {self.features.dim}-dim feature map")
        object.__setattr__(self, "coef", _readonly(coef))

    def evaluate(self, proxy, a, x):
        return self.features(proxy, a, x) @ self.coef

    def to_dict(self):
        return {"type": "sieve", "coef": self.coef.tolist(), "features": self.features.to_dict()}


@dataclass(frozen=True, eq=False)
class KernelDescriptor:
    """Kernel expansion ``sum_i dual_coef[i] * k(anchor_i, .)``."""

    dual_coef: np.ndarray
    anchors: tuple
    kernel: KernelSpec

    def __post_init__(self):
        object.__setattr__(self, "dual_coef", _readonly(np.asarray(self.dual_coef, dtype=float).reshape(-1)))
        object.__setattr__(self, "anchors", tuple(_readonly(np.asarray(v, dtype=float)) for v in self.anchors))

    def evaluate(self, proxy, a, x):
        return self.kernel.gram((proxy, a, x), self.anchors) @ self.dual_coef

    def to_dict(self):
        return {
            "type": "rkhs",
            "dual_coef": self.dual_coef.tolist(),
            "anchors": [v.tolist() for v in self.anchors],
            "kernel": self.kernel.to_dict(),
        }


def descriptor_from_dict(d):
    if d["type"] == "sieve":
        return SieveDescriptor(np.asarray(d["coef"]), feature_map_from_dict(d["features"]))
    if d["type"] == "rkhs":
        anchors = tuple(np.asarray(v, dtype=float) for v in d["anchors"])
        n = anchors[1].shape[0]
        anchors = (anchors[0].reshape(n, -1), anchors[1], anchors[2].reshape(n, -1))
        return KernelDescriptor(np.asarray(d["dual_coef"]), anchors, kernel_from_dict(d["kernel"]))
    raise ValueError(f"unknown bridge descriptor {d['type']!r}")


@dataclass(frozen=True, eq=False)
class BridgeFit:
    """A fitted outcome bridge h(w, a, x) or action bridge q(z, a, x)."""

    kind: str
    descriptor: object
    actions: object
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("outcome", "action"):
            raise ValueError("kind must be 'outcome' or 'action'")

    def __call__(self, proxy, a, x):
        a = np.asarray(a)
        n = a.shape[0]
        proxy = np.asarray(proxy, dtype=float).reshape(n, -1)
        x = np.asarray(x, dtype=float).reshape(n, -1)
        return np.asarray(self.descriptor.evaluate(proxy, a, x), dtype=float)

    def on(self, data):
        """Evaluate on the relevant proxy of each row of an ObservationTable."""
        proxy = data.w if self.kind == "outcome" else data.z
        return self(proxy, data.a, data.x)

    def to_dict(self):
        return {
            "kind": self.kind,
            "actions": self.actions.to_dict(),
            "descriptor": self.descriptor.to_dict(),
            "diagnostics": _jsonable(self.diagnostics),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["kind"], descriptor_from_dict(d["descriptor"]), actions_from_dict(d["actions"]),
                   dict(d.get("diagnostics", {})))

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def constant_bridge(kind, value, actions):
    from .features import ConstantFeatures

    return BridgeFit(kind, SieveDescriptor(np.array([float(value)]), ConstantFeatures()), actions)


# --------------------------------------------------------------------------
# the T-operator


def t_apply(h, contrast, w, x):
    """(T h)(w_i, x_i) for every row i."""
    contrast.check_compatible(h.actions)
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    w = np.asarray(w, dtype=float).reshape(n, -1)
    x = x.reshape(n, -1)
    nodes, _ = contrast.nodes()
    weights = contrast.node_weights(x)
    out = np.zeros(n)
    for k, node in enumerate(nodes):
        out += weights[:, k] * h(w, np.full(n, node), x)
    return out


def t_apply_features(features, contrast, w, x):
    """T applied column-wise to a feature map: the (n, d) matrix of (T psi_j)(w_i, x_i)."""
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    w = np.asarray(w, dtype=float).reshape(n, -1)
    x = x.reshape(n, -1)
    nodes, _ = contrast.nodes()
    weights = contrast.node_weights(x)
    out = np.zeros((n, features.dim))
    for k, node in enumerate(nodes):
        out += weights[:, k, None] * features(w, np.full(n, node), x)
    return out


def t_apply_kernel(kernel, contrast, anchor, target):
    """Kernel section at ``anchor`` with T applied in its second argument.

    ``anchor`` is a point set (w, a, x) of size m and ``target`` a set
    (w', x') of size n; returns the (m, n) matrix with entries
    ``sum_k weight_k pi(a_k | x'_j) k((w_i, a_i, x_i), (w'_j, a_k, x'_j))``.
    """
    tw, tx = target
    tx = np.asarray(tx, dtype=float)
    n = tx.shape[0]
    tw = np.asarray(tw, dtype=float).reshape(n, -1)
    tx = tx.reshape(n, -1)
    nodes, _ = contrast.nodes()
    weights = contrast.node_weights(tx)
    m = np.asarray(anchor[1]).shape[0]
    out = np.zeros((m, n))
    for k, node in enumerate(nodes):
        out += kernel.gram(anchor, (tw, np.full(n, node), tx)) * weights[None, :, k]
    return out
