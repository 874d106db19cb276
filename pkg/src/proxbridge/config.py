"""JSON configuration: schemas, validation and object builders."""

import copy
import hashlib
import json

import jsonschema
import numpy as np

from .core import ObservationTable, contrast_from_dict
from .errors import ConfigurationError
from .features import IndicatorFeatures, ConstantFeatures, feature_map_from_dict
from .gace import ESTIMATORS, FixedNuisance, KernelNuisance, SieveNuisance
from .rkhs import KernelHypothesis, RKHSConfig, SieveHypothesis
from .kernels import kernel_from_dict
from .sieve import SieveConfig
from .synthetic import (
    DiscreteDGP,
    LinearSEMDGP,
    dgp_from_dict,
    oracle_discrete_bridge_sets,
    oracle_linear_sem_bridges,
)

PRESETS = ("saturated", "proxy_constant", "constant")

_dgp_ref = {"oneOf": [{"type": "string"}, {"type": "object", "required": ["type"]}]}
_feature = {"type": "object", "oneOf": [
    {"required": ["preset"], "properties": {"preset": {"enum": list(PRESETS)}}, "additionalProperties": False},
    {"required": ["type"]},
]}
_sieve_side = {
    "type": "object",
    "required": ["hypothesis", "critic"],
    "additionalProperties": False,
    "properties": {
        "family": {"const": "sieve"},
        "strategy": {"enum": [1, 2]},
        "lambda": {"type": "number", "minimum": 0},
        "gamma": {"type": ["number", "null"], "minimum": 0},
        "rho": {"type": "number", "minimum": 0},
        "hypothesis": _feature,
        "critic": _feature,
    },
}
_hypothesis = {"type": "object", "oneOf": [
    {"required": ["type", "features"], "properties": {"type": {"const": "sieve"}, "features": _feature},
     "additionalProperties": False},
    {"required": ["type"], "properties": {"type": {"const": "kernel"}, "kernel": {"type": ["object", "null"]},
                                          "rho": {"type": ["number", "null"]}}, "additionalProperties": False},
]}
NUISANCE_SCHEMA = {"oneOf": [
    {"type": "object", "required": ["family", "h", "q"], "additionalProperties": False,
     "properties": {"family": {"const": "sieve"}, "h": _sieve_side, "q": _sieve_side}},
    {"type": "object", "required": ["family", "h_hypothesis", "q_hypothesis"], "additionalProperties": False,
     "properties": {
         "family": {"const": "rkhs"},
         "strategy": {"enum": [1, 2]},
         "lambda": {"type": "number", "minimum": 0},
         "gamma": {"type": ["number", "null"]},
         "rho": {"type": ["number", "null"]},
         "kernel_z": {"type": ["object", "null"]},
         "kernel_w": {"type": ["object", "null"]},
         "h_hypothesis": _hypothesis,
         "q_hypothesis": _hypothesis,
     }},
    {"type": "object", "required": ["family"], "additionalProperties": False,
     "properties": {"family": {"const": "oracle"}}},
]}
DATA_SCHEMA = {"oneOf": [
    {"type": "object", "required": ["csv"], "additionalProperties": False,
     "properties": {"csv": {"type": "string"}, "sidecar": {"type": "string"}, "dgp": _dgp_ref}},
    {"type": "object", "required": ["dgp", "n"], "additionalProperties": False,
     "properties": {"dgp": _dgp_ref, "n": {"type": "integer", "minimum": 0}, "seed": {"type": "integer"}}},
]}
ESTIMATE_SCHEMA = {
    "type": "object",
    "required": ["data", "nuisance"],
    "additionalProperties": False,
    "properties": {
        "command": {"const": "estimate"},
        "data": DATA_SCHEMA,
        "contrast": {"type": "object", "required": ["name"]},
        "nuisance": NUISANCE_SCHEMA,
        "estimator": {"enum": list(ESTIMATORS)},
        "folds": {"type": "integer", "minimum": 2},
        "alpha": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "seed": {"type": "integer"},
        "output": {"type": "string"},
    },
}
SYNTHESIZE_SCHEMA = {
    "type": "object",
    "required": ["dgp", "n"],
    "additionalProperties": False,
    "properties": {
        "command": {"const": "synthesize"},
        "dgp": _dgp_ref,
        "n": {"type": "integer", "minimum": 0},
        "seed": {"type": "integer"},
        "output": {"type": "string"},
    },
}
_estimator_entry = {
    "type": "object", "required": ["nuisance"], "additionalProperties": False,
    "properties": {"estimator": {"enum": list(ESTIMATORS)}, "folds": {"type": "integer", "minimum": 2},
                   "nuisance": NUISANCE_SCHEMA},
}
STUDY_SCHEMA = {
    "type": "object",
    "required": ["kind"],
    "additionalProperties": False,
    "properties": {
        "command": {"const": "study"},
        "kind": {"enum": ["rate", "coverage", "identities", "projected_mse", "ill_posedness"]},
        "dgp": _dgp_ref,
        "dgps": {"type": "array", "items": _dgp_ref, "minItems": 1},
        "contrast": {"type": "object", "required": ["name"]},
        "estimators": {"type": "object", "minProperties": 1, "additionalProperties": _estimator_entry},
        "nuisance": NUISANCE_SCHEMA,
        "sizes": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1},
        "reps": {"type": "integer", "minimum": 1},
        "trials": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer"},
        "alpha": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "oracle_J": {"type": "number"},
        "output": {"type": "string"},
    },
    "allOf": [
        {"if": {"properties": {"kind": {"enum": ["rate", "coverage"]}}},
         "then": {"required": ["dgp", "estimators", "sizes", "reps"]}},
        {"if": {"properties": {"kind": {"const": "projected_mse"}}},
         "then": {"required": ["dgp", "nuisance", "sizes", "reps"]}},
    ],
}
REPORT_SCHEMA = {
    "type": "object",
    "required": ["estimator", "estimate", "se", "ci", "alpha", "n", "interval", "meta"],
    "properties": {
        "estimator": {"enum": list(ESTIMATORS)},
        "estimate": {"type": "number"},
        "se": {"type": "number", "minimum": 0},
        "ci": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
        "alpha": {"type": "number"},
        "n": {"type": "integer"},
        "interval": {"enum": ["asymptotic", "descriptive"]},
        "oracle_J": {"type": ["number", "null"]},
        "meta": {"type": "object", "required": ["config_hash", "seed", "version"]},
    },
}
SCHEMAS = {"estimate": ESTIMATE_SCHEMA, "synthesize": SYNTHESIZE_SCHEMA, "study": STUDY_SCHEMA}


def config_hash(cfg):
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()


def detect_command(cfg):
    if "command" in cfg:
        return cfg["command"]
    if "kind" in cfg:
        return "study"
    if "nuisance" in cfg and "data" in cfg:
        return "estimate"
    if "dgp" in cfg and "n" in cfg:
        return "synthesize"
    raise ConfigurationError("cannot tell which command this config is for; add a \"command\" key")


def validate(cfg, command=None):
    """Schema-check ``cfg``; raise ConfigurationError naming the offending path."""
    command = command or detect_command(cfg)
    if command not in SCHEMAS:
        raise ConfigurationError(f"unknown command {command!r}")
    validator = jsonschema.Draft202012Validator(SCHEMAS[command])
    errors = sorted(validator.iter_errors(cfg), key=lambda e: list(e.absolute_path))
    if errors:
        parts = []
        for err in errors[:5]:
            where = "/".join(str(p) for p in err.absolute_path) or "<root>"
            parts.append(f"at {where}: {err.message}")
        raise ConfigurationError(f"invalid {command} config " + "; ".join(parts))
    return command


def load_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as err:
        raise ConfigurationError(f"{path} is not valid JSON: {err}") from err


# -- builders -----------------------------------------------------------------


def build_dgp(ref):
    try:
        return dgp_from_dict(copy.deepcopy(ref))
    except (KeyError, TypeError) as err:
        raise ConfigurationError(f"invalid DGP specification: {err}") from err


def build_contrast(spec, dgp=None):
    if spec is not None:
        try:
            return contrast_from_dict(spec)
        except (KeyError, ValueError) as err:
            raise ConfigurationError(f"invalid contrast: {err}") from err
    if isinstance(dgp, DiscreteDGP):
        return dgp.contrast()
    raise ConfigurationError("a \"contrast\" is required unless the data come from a discrete DGP")


def _levels(values, known=None):
    if known is not None:
        return int(known)
    values = np.asarray(values)
    if values.size == 0:
        return 1
    if np.any(values < 0) or np.any(values != np.rint(values)):
        raise ConfigurationError("feature presets need integer-coded proxy and covariate columns")
    return int(values.max()) + 1


class _Levels:
    """Cardinalities of W, Z, A and X, from the DGP when known, else from the data."""

    def __init__(self, data=None, dgp=None):
        if isinstance(dgp, DiscreteDGP):
            self.w, self.z, self.a, self.x = dgp.n_w, dgp.n_z, dgp.n_a, (dgp.n_x,)
            return
        if data is None:
            raise ConfigurationError("feature presets need data or a discrete DGP to infer levels")
        if data.p_w != 1 or data.p_z != 1:
            raise ConfigurationError("feature presets support a single proxy column")
        self.w = _levels(data.w)
        self.z = _levels(data.z)
        self.a = data.actions.size
        self.x = tuple(_levels(data.x[:, j]) for j in range(data.d_x))


def build_features(spec, proxy, levels):
    """Feature map from a dict; ``proxy`` ('w' or 'z') fixes the proxy levels of a preset."""
    if "preset" not in spec:
        try:
            return feature_map_from_dict(spec)
        except (KeyError, TypeError, ValueError) as err:
            raise ConfigurationError(f"invalid feature map {spec}: {err}") from err
    preset = spec["preset"]
    if preset == "constant":
        return ConstantFeatures()
    if levels is None:
        raise ConfigurationError("feature presets need data or a discrete DGP to infer levels")
    x_levels = levels.x or None
    if preset == "saturated":
        return IndicatorFeatures((getattr(levels, proxy),), levels.a, x_levels)
    if preset == "proxy_constant":
        return IndicatorFeatures(None, levels.a, x_levels)
    raise ConfigurationError(f"unknown feature preset {preset!r}")


def _needs_levels(spec):
    return "preset" in json.dumps(spec)


def _sieve_config(side, hyp_proxy, critic_proxy, levels):
    d = dict(side)
    d.pop("family", None)
    strategy = int(d.get("strategy", 2))
    lam = float(d.get("lambda", 1.0 if strategy == 2 else 0.0))
    if strategy == 1 and lam != 0:
        raise ConfigurationError("strategy 1 has no stabilizer; set lambda to 0 or use strategy 2")
    if strategy == 2 and lam == 0:
        raise ConfigurationError("strategy 2 needs lambda > 0")
    return SieveConfig(
        build_features(d["hypothesis"], hyp_proxy, levels),
        build_features(d["critic"], critic_proxy, levels),
        lam=lam,
        gamma=d.get("gamma"),
        rho=float(d.get("rho", 0.0)),
    )


def _hypothesis(d, proxy, levels):
    if d["type"] == "sieve":
        return SieveHypothesis(build_features(d["features"], proxy, levels))
    kern = d.get("kernel")
    return KernelHypothesis(None if kern is None else kernel_from_dict(kern), d.get("rho"))


def oracle_nuisance(dgp):
    """Fixed true bridges of a DGP (the particular solutions when bridges are not unique)."""
    if isinstance(dgp, DiscreteDGP):
        sets = oracle_discrete_bridge_sets(dgp)
        return FixedNuisance(sets.h.fit(), sets.q.fit(), "oracle")
    if isinstance(dgp, LinearSEMDGP):
        h, q = oracle_linear_sem_bridges(dgp)
        return FixedNuisance(h, q, "oracle")
    raise ConfigurationError("oracle bridges need a known DGP")


def build_nuisance(spec, data=None, dgp=None):
    family = spec["family"]
    if family == "oracle":
        if dgp is None:
            raise ConfigurationError("oracle nuisances need the data to come from (or name) a DGP")
        return oracle_nuisance(dgp)
    levels = _Levels(data, dgp) if _needs_levels(spec) else None
    if family == "sieve":
        return SieveNuisance(_sieve_config(spec["h"], "w", "z", levels), _sieve_config(spec["q"], "z", "w", levels))
    if family == "rkhs":
        strategy = int(spec.get("strategy", 2))
        kz, kw = spec.get("kernel_z"), spec.get("kernel_w")
        return KernelNuisance(RKHSConfig(
            _hypothesis(spec["h_hypothesis"], "w", levels),
            _hypothesis(spec["q_hypothesis"], "z", levels),
            None if kz is None else kernel_from_dict(kz),
            None if kw is None else kernel_from_dict(kw),
            strategy,
            float(spec.get("lambda", 1.0 if strategy == 2 else 0.0)),
            spec.get("gamma"),
            spec.get("rho"),
        ))
    raise ConfigurationError(f"unknown nuisance family {family!r}")


def load_data(spec, default_seed=0):
    """(ObservationTable, dgp or None) from a data section."""
    from .diagnostics import generate

    dgp = build_dgp(spec["dgp"]) if "dgp" in spec else None
    if "csv" in spec:
        try:
            data = ObservationTable.from_csv(spec["csv"], spec.get("sidecar"))
        except FileNotFoundError as err:
            raise ConfigurationError(f"data file not found: {err.filename}") from err
        return data, dgp
    return generate(dgp, spec["n"], spec.get("seed", default_seed)), dgp
