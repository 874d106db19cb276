"""Plug-in and cross-fitted estimators of the GACE with EIF-based intervals."""

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .core import BridgeFit, constant_bridge, t_apply
from .errors import ConfigurationError
from .rkhs import RKHSConfig
from .sieve import SieveConfig, fit_h_sieve, fit_q_sieve

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EstimateReport:
    """Point estimate, standard error and a normal-quantile interval at level ``alpha``.

    ``interval`` is "asymptotic" for DR estimators and "descriptive" for IPW
    and REG, whose intervals carry no coverage claim.
    """

    estimator: str
    estimate: float
    se: float
    ci: tuple
    alpha: float
    n: int
    interval: str
    folds: list = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.se >= 0:
            raise ValueError("standard error must be non-negative")

    @property
    def width(self):
        return self.ci[1] - self.ci[0]

    def to_dict(self):
        return {
            "estimator": self.estimator,
            "estimate": self.estimate,
            "se": self.se,
            "ci": list(self.ci),
            "alpha": self.alpha,
            "n": self.n,
            "interval": self.interval,
            "folds": self.folds,
            "config": self.config,
        }


def normal_ci(estimate, se, alpha=0.05):
    z = norm.ppf(1.0 - alpha / 2.0)
    return (estimate - z * se, estimate + z * se)


def _report(name, scores, alpha, interval, folds=None, config=None):
    scores = np.asarray(scores, dtype=float)
    n = scores.shape[0]
    if n == 0:
        raise ConfigurationError("cannot estimate from an empty table")
    est = float(scores.mean())
    var = float(np.mean((scores - est) ** 2))
    se = float(np.sqrt(var / n))
    return EstimateReport(name, est, se, normal_ci(est, se, alpha), alpha, n, interval, folds or [], config or {})


# -- per-row scores ------------------------------------------------------------


def ipw_scores(q, data, contrast):
    return contrast(data.a, data.x) * q.on(data) * data.y


def reg_scores(h, data, contrast):
    return t_apply(h, contrast, data.w, data.x)


def dr_scores(h, q, data, contrast):
    """pi q (Y - h) + T h, row by row."""
    pi = contrast(data.a, data.x)
    return pi * q.on(data) * (data.y - h.on(data)) + t_apply(h, contrast, data.w, data.x)


def eif_variance(h, q, estimate, data, contrast):
    """E_n[(phi_DR - J_hat)^2]."""
    s = dr_scores(h, q, data, contrast)
    return float(np.mean((s - estimate) ** 2))


def estimate_ipw(q, data, contrast, alpha=0.05):
    return _report("ipw", ipw_scores(q, data, contrast), alpha, "descriptive")


def estimate_reg(h, data, contrast, alpha=0.05):
    return _report("reg", reg_scores(h, data, contrast), alpha, "descriptive")


def estimate_dr(h, q, data, contrast, alpha=0.05):
    return _report("dr", dr_scores(h, q, data, contrast), alpha, "asymptotic")


# -- nuisance specifications -------------------------------------------------------


@dataclass(frozen=True)
class SieveNuisance:
    h: SieveConfig
    q: SieveConfig

    def min_train_size(self):
        return max(self.h.hypothesis.dim, self.h.critic.dim, self.q.hypothesis.dim, self.q.critic.dim)

    def fit(self, data, contrast, need=("h", "q")):
        h = fit_h_sieve(data, self.h) if "h" in need else None
        q = fit_q_sieve(data, self.q, contrast) if "q" in need else None
        return h, q

    def to_dict(self):
        return {"family": "sieve", "h": self.h.to_dict(), "q": self.q.to_dict()}


@dataclass(frozen=True)
class KernelNuisance:
    cfg: RKHSConfig

    def min_train_size(self):
        return 2

    def fit(self, data, contrast, need=("h", "q")):
        gram = self.cfg.gram(data, contrast if "q" in need else None)
        h = self.cfg.fit_h(data, gram) if "h" in need else None
        q = self.cfg.fit_q(data, contrast, gram) if "q" in need else None
        return h, q

    def to_dict(self):
        return self.cfg.to_dict()


@dataclass(frozen=True)
class FixedNuisance:
    """Pre-fitted bridges (e.g. oracle bridges) used as-is on every fold."""

    h: BridgeFit
    q: BridgeFit
    label: str = "fixed"

    def min_train_size(self):
        return 0

    def fit(self, data, contrast, need=("h", "q")):
        return self.h, self.q

    def to_dict(self):
        return {"family": self.label}


def zero_bridges(actions):
    return constant_bridge("outcome", 0.0, actions), constant_bridge("action", 0.0, actions)


# -- cross-fitting ---------------------------------------------------------------


def fold_indices(n, folds, seed):
    """Seeded uniform shuffle, then ``folds`` contiguous blocks."""
    perm = np.random.default_rng(seed).permutation(n)
    return [np.sort(b) for b in np.array_split(perm, folds)]


def _fit_fold(nuisance, data, contrast, train, test):
    tr = data.subset(train)
    te = data.subset(test)
    h, q = nuisance.fit(tr, contrast)
    scores = dr_scores(h, q, te, contrast)
    info = {
        "size": int(test.shape[0]),
        "train_size": int(train.shape[0]),
        "mean": float(scores.mean()) if scores.size else float("nan"),
        "h": dict(h.diagnostics),
        "q": dict(q.diagnostics),
    }
    return scores, info


def estimate_dr_crossfit(data, contrast, nuisance, folds=2, seed=0, alpha=0.05, jobs=1):
    """K-fold cross-fitted DR: nuisances fit on the complement of each fold, scores pooled."""
    folds = int(folds)
    if folds < 2:
        raise ConfigurationError("cross-fitting needs folds >= 2")
    n = data.n
    min_fit = nuisance.min_train_size()
    blocks = fold_indices(n, folds, seed)
    smallest_train = n - max(b.shape[0] for b in blocks)
    if min(b.shape[0] for b in blocks) < 1 or smallest_train < min_fit:
        raise ConfigurationError(
            f"n={n} is too small for {folds} folds: each training split needs at least {min_fit} rows "
            f"(largest hypothesis/critic dimension), smallest has {smallest_train}"
        )
    everything = np.arange(n)
    tasks = [(np.setdiff1d(everything, b, assume_unique=True), b) for b in blocks]
    if jobs and jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_fit_fold, nuisance, data, contrast, tr, te) for tr, te in tasks]
            results = [f.result() for f in futures]
    else:
        results = [_fit_fold(nuisance, data, contrast, tr, te) for tr, te in tasks]
    scores = np.empty(n)
    infos = []
    for (_, te), (s, info) in zip(tasks, results):
        scores[te] = s
        infos.append(info)
    config = {"folds": folds, "seed": seed, "nuisance": nuisance.to_dict()}
    return _report("dr-crossfit", scores, alpha, "asymptotic", infos, config)


ESTIMATORS = ("ipw", "reg", "dr", "dr-crossfit")


def estimate(data, contrast, nuisance, estimator="dr-crossfit", folds=2, seed=0, alpha=0.05, jobs=1):
    """Dispatch by estimator name; non-cross-fitted estimators fit nuisances on the full sample."""
    if estimator == "dr-crossfit":
        return estimate_dr_crossfit(data, contrast, nuisance, folds, seed, alpha, jobs)
    if estimator not in ESTIMATORS:
        raise ConfigurationError(f"unknown estimator {estimator!r}; choose from {ESTIMATORS}")
    need = {"ipw": ("q",), "reg": ("h",), "dr": ("h", "q")}[estimator]
    h, q = nuisance.fit(data, contrast, need)
    if estimator == "ipw":
        rep = estimate_ipw(q, data, contrast, alpha)
    elif estimator == "reg":
        rep = estimate_reg(h, data, contrast, alpha)
    else:
        rep = estimate_dr(h, q, data, contrast, alpha)
    diag = {k: dict(b.diagnostics) for k, b in (("h", h), ("q", q)) if b is not None}
    return EstimateReport(rep.estimator, rep.estimate, rep.se, rep.ci, rep.alpha, rep.n, rep.interval,
                          [diag], {"nuisance": nuisance.to_dict()})


def nuisance_from_dict(d):
    family = d.get("family")
    if family == "sieve":
        return SieveNuisance(SieveConfig.from_dict(d["h"]), SieveConfig.from_dict(d["q"]))
    if family == "rkhs":
        return KernelNuisance(RKHSConfig.from_dict(d))
    raise ConfigurationError(f"unknown nuisance family {family!r}")
