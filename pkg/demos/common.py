"""The small 1-D weakly coupled problem shared by the demos."""

import numpy as np

from retromfg import InteractionSpec, KernelSpec, MfgProblem, ScalarField, build_grid, unit_mass


def weak_coupling_problem(nodes=33, steps=33, T=1.0):
    g = build_grid((1.0,), T, nodes, steps)
    return MfgProblem(
        g,
        0.1,
        ScalarField(g, np.ones(g.shape)),
        ScalarField.from_function(g, lambda x: 0.5 * np.cos(np.pi * x)),
        unit_mass(ScalarField.from_function(g, lambda x: 1 + 0.5 * np.cos(np.pi * x))),
        interaction=InteractionSpec(0.1, 0.1, 1.0, 1.0),
        kernel=KernelSpec(0.5, 0.5),
    )
