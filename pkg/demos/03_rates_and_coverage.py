"""A scaled-down replication study: RMSE rate and interval coverage.

Every estimator sees the same simulated datasets (common random numbers).
The full-size versions are in tests/test_acceptance.py.
"""

from proxbridge import diagnostics as diag
from proxbridge import gace
from proxbridge.features import ConstantFeatures
from proxbridge.sieve import SieveConfig
from proxbridge.synthetic import bundled_dgp

dgp = bundled_dgp("unique")
sat_h, sat_q = dgp.saturated_features("h"), dgp.saturated_features("q")
good = gace.SieveNuisance(SieveConfig(sat_h, sat_q), SieveConfig(sat_q, sat_h))
bad_h = gace.SieveNuisance(SieveConfig(ConstantFeatures(), sat_q), SieveConfig(sat_q, sat_h))

study = diag.ReplicationStudy(
    dgp,
    {"dr": diag.EstimatorSpec(good), "dr_bad_h": diag.EstimatorSpec(bad_h), "reg_bad_h": diag.EstimatorSpec(bad_h, "reg")},
    sizes=(500, 2000, 8000),
    reps=50,
    seed=0,
)
for name, rep in diag.run_rate_study(study).items():
    rmse = ", ".join(f"{r:.4f}" for r in rep.rmse)
    slope = "undefined" if rep.undefined else f"{rep.slope:.2f}"
    print(f"{name:10s} RMSE [{rmse}]  log-log slope {slope}")

for (name, n), cov in diag.run_coverage_study(study).items():
    if name == "dr":
        print(f"coverage of the 95% interval at n={n}: {cov.coverage:.2f} (exact CI {cov.ci[0]:.2f}-{cov.ci[1]:.2f})")
