import numpy as np
import pytest
from hypothesis import settings

from retromfg import InteractionSpec, KernelSpec, MfgProblem, ScalarField, build_grid, unit_mass

settings.register_profile("default", max_examples=30, deadline=None)
settings.load_profile("default")

ACCEPTANCE_LINES: list[str] = []


def record_acceptance(number: int, ok: bool, detail: str) -> None:
    line = f"ACCEPTANCE {number}: {'PASS' if ok else 'FAIL'} | {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


def weak_coupling_problem(nodes=33, steps=33, T=1.0, **kw) -> MfgProblem:
    """1-D weakly coupled problem used throughout the retrospective tests."""
    g = build_grid((1.0,), T, nodes, steps)
    kw.setdefault("interaction", InteractionSpec(0.1, 0.1, 1.0, 1.0))
    kw.setdefault("kernel", KernelSpec(0.5, 0.5))
    return MfgProblem(
        g,
        kw.pop("beta", 0.1),
        ScalarField.from_function(g, lambda x: np.ones_like(x)),
        ScalarField.from_function(g, lambda x: 0.5 * np.cos(np.pi * x)),
        unit_mass(ScalarField.from_function(g, lambda x: 1 + 0.5 * np.cos(np.pi * x))),
        **kw,
    )


@pytest.fixture(scope="session")
def small_problem():
    return weak_coupling_problem(17, 16)


@pytest.fixture(scope="session")
def small_truth(small_problem):
    from retromfg import picard_solve

    return picard_solve(small_problem)
