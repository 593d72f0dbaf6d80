"""Start the reconstruction from scattered guesses and watch them agree."""

import sys
from pathlib import Path

from retromfg import WeightedObjective, uniqueness_check

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "tests"))
from conftest import weak_coupling_problem  # noqa: E402

problem = weak_coupling_problem(33, 33)
rep = uniqueness_check(problem, WeightedObjective.default(problem), 4, seed=3)
print(f"{rep.n_inits} random starts, final objectives {', '.join(f'{j:.3e}' for j in rep.objectives)}")
print(f"largest pairwise H^(1,0) distance {rep.max_pairwise_distance:.2e}, "
      f"relative to the solution {rep.relative_distance:.2e}")
