"""Bridges need not be unique, and need not be learned, for J to be learned.

With three proxy levels and a binary confounder every (a, x) cell has a
one-dimensional family of valid outcome bridges. We show:

1. every member of the family gives the same population REG, IPW and DR value;
2. with a constants-only critic (strategy I) the fitted bridge never
   approaches the bridge set, yet on a DGP where the constant critic
   already spans the direction the functional needs, REG is still consistent;
3. on a DGP where it does not, the same procedure is biased.
"""

import numpy as np

from proxbridge import gace
from proxbridge.features import ConstantFeatures
from proxbridge.sieve import SieveConfig
from proxbridge.synthetic import (
    bundled_dgp,
    generate_discrete,
    oracle_conditional_residual,
    oracle_discrete_bridge_sets,
    oracle_discrete_J,
    population_reg,
)

dgp = bundled_dgp("nonunique")
sets = oracle_discrete_bridge_sets(dgp)
print(f"outcome bridge null dimension: {sets.h.null_dim}")
rng = np.random.default_rng(0)
values = [population_reg(dgp, sets.h.member(rng.normal(scale=5, size=sets.h.null_dim))) for _ in range(5)]
print("population REG over 5 different bridges:", np.round(values, 12), " J =", oracle_discrete_J(dgp))

for name in ("behavior_policy", "nonunique"):
    dgp = bundled_dgp(name)
    J = oracle_discrete_J(dgp)
    cfg = SieveConfig.strategy1(dgp.saturated_features("h"), ConstantFeatures())
    print(f"\n{name}: constants-only critic, strategy I")
    for n in (2000, 20_000, 100_000):
        data = generate_discrete(dgp, n, seed=n)
        h, _ = gace.SieveNuisance(cfg, cfg).fit(data, dgp.contrast(), ("h",))
        resid = oracle_conditional_residual(dgp, h, "h")
        err = gace.estimate_reg(h, data, dgp.contrast()).estimate - J
        print(f"  n={n:>7d}  projected residual {resid:.3f}   REG error {err:+.4f}")
