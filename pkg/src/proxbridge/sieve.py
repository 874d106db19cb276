"""Minimax bridge estimation with linear hypothesis and critic classes.

Both bridges reduce to one quadratic problem. With a critic feature map
``c`` and a hypothesis map ``g`` the empirical moment vector of the
candidate with coefficients ``alpha`` is ``B @ alpha - b``:

* outcome bridge h = g(w, a, x)^T alpha, critic c(z, a, x):
  ``b = E_n[Y c]``, ``B = E_n[c g^T]``;
* action bridge q = g(z, a, x)^T alpha, critic c(w, a, x):
  ``b = E_n[T c]``, ``B = E_n[c (pi g)^T]``.

Strategy I (no stabilizer) minimizes ``|B alpha - b|^2``, the value of
the inner sup over the unit ball of critic coefficients. Strategy II
replaces the ball by the penalty ``lam E_n[f^2] + gamma |beta|^2`` on the
critic ``f = c^T beta``; the inner sup then has the closed form
``(1/4) (B alpha - b)^T (gamma I + lam E_n[c c^T])^{-1} (B alpha - b)``.
"""

import logging
from dataclasses import dataclass

import numpy as np

from . import linalg
from .core import BridgeFit, SieveDescriptor, t_apply_features
from .errors import ConfigurationError
from .features import FeatureMap, feature_map_from_dict

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SieveConfig:
    """Hypothesis and critic feature maps plus the penalties.

    ``lam`` is the stabilizer weight (0 selects strategy I), ``gamma`` the
    critic ridge (``None`` = 1e-4 * trace(E_n[c c^T]) / dim), ``rho`` an
    optional Tikhonov penalty ``rho |alpha|^2`` on the hypothesis.
    """

    hypothesis: FeatureMap
    critic: FeatureMap
    lam: float = 1.0
    gamma: float = None
    rho: float = 0.0

    def __post_init__(self):
        if not self.lam >= 0:
            raise ConfigurationError("stabilizer lam must be >= 0")
        if self.gamma is not None and not self.gamma >= 0:
            raise ConfigurationError("critic ridge gamma must be >= 0")
        if self.lam > 0 and self.gamma is not None and self.gamma == 0:
            raise ConfigurationError(
                "strategy II (lam > 0) needs gamma > 0 so that gamma I + lam E_n[c c^T] is invertible; "
                "set gamma > 0 or leave it unset for the default"
            )
        if not self.rho >= 0:
            raise ConfigurationError("Tikhonov rho must be >= 0")

    @property
    def strategy(self):
        return 1 if self.lam == 0 else 2

    @classmethod
    def strategy1(cls, hypothesis, critic, rho=0.0):
        return cls(hypothesis, critic, lam=0.0, gamma=None, rho=rho)

    def resolved_gamma(self, sigma):
        if self.gamma is not None:
            return float(self.gamma)
        d = max(sigma.shape[0], 1)
        scale = np.trace(sigma) / d
        return 1e-4 * scale if scale > 0 else 1e-4

    def to_dict(self):
        return {
            "family": "sieve",
            "strategy": self.strategy,
            "lambda": self.lam,
            "gamma": self.gamma,
            "rho": self.rho,
            "hypothesis": self.hypothesis.to_dict(),
            "critic": self.critic.to_dict(),
        }

    @classmethod
    def from_dict(cls, d):
        strategy = int(d.get("strategy", 2))
        lam = float(d.get("lambda", 1.0 if strategy == 2 else 0.0))
        if strategy == 1 and lam != 0:
            raise ConfigurationError("strategy 1 has no stabilizer; set lambda to 0 or use strategy 2")
        if strategy == 2 and lam == 0:
            raise ConfigurationError("strategy 2 needs lambda > 0")
        return cls(
            feature_map_from_dict(d["hypothesis"]),
            feature_map_from_dict(d["critic"]),
            lam=lam,
            gamma=None if d.get("gamma") is None else float(d["gamma"]),
            rho=float(d.get("rho", 0.0)),
        )


@dataclass(frozen=True)
class MomentSystem:
    """Sufficient statistics of a sieve problem: ``b``, ``B`` and the critic second moment."""

    b: np.ndarray
    B: np.ndarray
    sigma: np.ndarray
    n: int


def moment_system_h(data, cfg):
    c = cfg.critic(data.z, data.a, data.x)
    g = cfg.hypothesis(data.w, data.a, data.x)
    n = max(data.n, 1)
    _check_finite(c, g)
    return MomentSystem(c.T @ data.y / n, c.T @ g / n, c.T @ c / n, data.n)


def moment_system_q(data, cfg, contrast):
    contrast.check_compatible(data.actions)
    c = cfg.critic(data.w, data.a, data.x)
    g = cfg.hypothesis(data.z, data.a, data.x)
    _check_finite(c, g)
    pi = contrast(data.a, data.x)
    tc = t_apply_features(cfg.critic, contrast, data.w, data.x)
    n = max(data.n, 1)
    return MomentSystem(tc.sum(axis=0) / n, c.T @ (pi[:, None] * g) / n, c.T @ c / n, data.n)


def _check_finite(*mats):
    for m in mats:
        if not np.all(np.isfinite(m)):
            raise ConfigurationError("feature evaluations must be finite")


def _weight(system, cfg):
    """Scale s and middle matrix M of the objective s (B a - b)^T M (B a - b)."""
    d = system.b.shape[0]
    if cfg.strategy == 1:
        return 1.0, np.eye(d)
    gamma = cfg.resolved_gamma(system.sigma)
    middle = gamma * np.eye(d) + cfg.lam * system.sigma
    return 0.25, np.linalg.inv(linalg.symmetrize(middle))


def objective(system, cfg, coef):
    s, m = _weight(system, cfg)
    g = system.B @ np.asarray(coef, dtype=float) - system.b
    return float(s * g @ m @ g)


def gradient(system, cfg, coef):
    """Gradient of the objective plus ``rho |alpha|^2``."""
    s, m = _weight(system, cfg)
    coef = np.asarray(coef, dtype=float)
    g = system.B @ coef - system.b
    return 2.0 * s * system.B.T @ m @ g + 2.0 * cfg.rho * coef


def solve(system, cfg):
    """Closed-form minimizer; the pseudoinverse picks the min-norm solution when it is not unique."""
    s, m = _weight(system, cfg)
    lhs = s * system.B.T @ m @ system.B + cfg.rho * np.eye(system.B.shape[1])
    rhs = s * system.B.T @ m @ system.b
    return linalg.pinv(linalg.symmetrize(lhs)) @ rhs


def _fit(system, cfg, kind, actions):
    coef = solve(system, cfg)
    diag = {
        "family": "sieve",
        "strategy": cfg.strategy,
        "objective": objective(system, cfg, coef),
        "lambda": cfg.lam,
        "gamma": cfg.resolved_gamma(system.sigma) if cfg.strategy == 2 else None,
        "rho": cfg.rho,
        "n": system.n,
        "hypothesis_dim": int(system.B.shape[1]),
        "critic_dim": int(system.B.shape[0]),
        "rank": linalg.rank(system.B, 1e-10) if system.B.size else 0,
    }
    return BridgeFit(kind, SieveDescriptor(coef, cfg.hypothesis), actions, diag)


def fit_h_sieve(data, cfg):
    """Outcome bridge h = hypothesis(w, a, x)^T alpha with a critic over (z, a, x)."""
    return _fit(moment_system_h(data, cfg), cfg, "outcome", data.actions)


def fit_q_sieve(data, cfg, contrast):
    """Action bridge q = hypothesis(z, a, x)^T alpha with a critic over (w, a, x).

    Only pi and the T-operator enter; no propensity model is fitted.
    """
    return _fit(moment_system_q(data, cfg, contrast), cfg, "action", data.actions)


def minimax_objective_h(data, cfg, coef):
    return objective(moment_system_h(data, cfg), cfg, coef)


def minimax_objective_q(data, cfg, coef, contrast):
    return objective(moment_system_q(data, cfg, contrast), cfg, coef)


def kkt_residual(system, cfg, coef):
    """|grad| relative to |grad| at the origin."""
    scale = max(np.linalg.norm(gradient(system, cfg, np.zeros(system.B.shape[1]))), 1e-300)
    return float(np.linalg.norm(gradient(system, cfg, coef)) / scale)
