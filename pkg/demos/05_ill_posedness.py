"""How hard is each bridge problem? The ill-posedness measures tau1 <= tau2.

tau2 compares the error of a bridge in L2 to its projected error; it is
infinite as soon as the bridge is not unique. tau1 only measures the part
of the error that matters for the functional and stays finite.
"""

from proxbridge import diagnostics as diag
from proxbridge.synthetic import bundled_discrete_dgps

for name, dgp in bundled_discrete_dgps().items():
    cells = []
    for bridge in ("h", "q"):
        feats = dgp.saturated_features(bridge)
        for kind in ("tau1", "tau2"):
            t = diag.ill_posedness_discrete(dgp, feats, kind, bridge)
            cells.append(f"{kind}^{bridge}={'inf' if t.infinite else f'{t.value:.3f}'}")
    print(f"{name:16s} " + "  ".join(cells))
