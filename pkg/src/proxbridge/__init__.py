"""Proximal causal inference for generalized average causal effects with minimax bridge estimation."""

__version__ = "0.1.0"

from .core import (  # noqa: E402
    BridgeFit,
    ContinuousActions,
    ContrastSpec,
    DiscreteActions,
    ObservationTable,
    ate_binary,
    policy_table,
    uniform_policy_contrast,
)
from .errors import BridgeExistenceError, ConditioningError, ConfigurationError  # noqa: E402
from .gace import (  # noqa: E402
    EstimateReport,
    FixedNuisance,
    KernelNuisance,
    SieveNuisance,
    estimate,
    estimate_dr,
    estimate_dr_crossfit,
    estimate_ipw,
    estimate_reg,
)
from .rkhs import KernelHypothesis, RKHSConfig, SieveHypothesis  # noqa: E402
from .sieve import SieveConfig, fit_h_sieve, fit_q_sieve  # noqa: E402
