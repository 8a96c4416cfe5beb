"""Power-law switching: fitted decay exponents against their predicted values.

The td preset perturbs the static potential by a term decaying like
<t>^(-delta). The Riccati residual and the ad-frame perturbation then fall
like <t>^(-(1+delta)), and the scattering limits converge like <t>^(-delta).
The script runs the diagonalization, states and scattering stages through
the pipeline and prints each fitted exponent with its target.

    python demos/decay_rates.py
"""

from kgdiag.config import parse_config
from kgdiag.pipeline import run_pipeline

cfg = parse_config({"scenario": {"name": "td", "params": {"delta": 2.0}}, "grid": {"n_points": 16},
                    "time": {"horizon": 40.0}})
bundle = run_pipeline(cfg, stages=["states", "scattering"])
for stage in bundle.as_dict()["stages"]:
    for c in stage["checks"]:
        if "exponent" in c["invariant"]:
            d = c["detail"]
            mark = "ok  " if c["passed"] else "FAIL"
            print(f"{mark} {c['invariant']:48s} fitted {d['rate']:+.2f}  expected {d['expected']:+.2f}")
