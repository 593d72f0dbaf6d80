"""Recover the whole space-time equilibrium from three snapshots.

Given the terminal payoff, the initial density and a noisy measurement of
the terminal density, minimise the weighted residual of both equations plus
data misfits, then compare with the forward solution.
"""

from retromfg import WeightedObjective, exact_data, perturb_data, picard_solve, reconstruct

from common import weak_coupling_problem

problem = weak_coupling_problem(33, 33)
truth = picard_solve(problem)
obj = WeightedObjective.default(problem)
exact = exact_data(truth)

reference = reconstruct(exact, obj, truth=truth)
print(f"exact data: {reference.iterations} Gauss-Newton steps, J = {reference.objective_trace[-1]:.3e}")
print("  distance to the forward solution (discretisation floor):",
      {k: f"{v:.3f}" for k, v in reference.errors.items()})

for delta in (1e-3, 1e-2, 1e-1):
    res = reconstruct(perturb_data(exact, delta, seed=0), obj, truth=truth, reference=(reference.v_hat, reference.m_hat))
    print(f"δ = {delta:g}: m error {res.errors['m_H10']:.2e}, v error block {res.errors['v_block']:.2e}")
