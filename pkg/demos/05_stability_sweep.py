"""Errors grow linearly with data noise: fit the log-log slopes.

Errors are measured between reconstructions from noisy and from exact data,
both minimisers of the same discrete problem, so the fixed discretisation
error cancels and only the noise response remains.
"""

import sys
from pathlib import Path

from pathlib import Path

from retromfg import WeightedObjective, stability_sweep
from retromfg.report import svg_plot

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "tests"))
from conftest import weak_coupling_problem  # noqa: E402

problem = weak_coupling_problem(33, 33)
deltas = [1e-3, 3e-3, 1e-2, 3e-2, 1e-1]
sweep = stability_sweep(problem, deltas, [0, 1, 2], WeightedObjective.default(problem))

for key in ("m_H10", "v_block", "v_H21"):
    f = sweep.fits[key]
    print(f"{key:>8}: slope {f['slope']:.3f} ± {f['slope_stderr']:.3f}")

out = Path("sweep.svg")
series = {k: ([r["data_norm"] for r in sweep.rows], [r[k] for r in sweep.rows]) for k in ("m_H10", "v_block")}
svg_plot(out, series, title="noise response", xlabel="data norm", ylabel="error", logx=True, logy=True)
print(f"plot written to {out.resolve()}")
