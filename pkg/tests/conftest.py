import numpy as np
import pytest

from dpmto.analysis import BoundaryConditions, MaterialModel, PointLoad, Support
from dpmto.mesh import build_mesh

_CRITERIA: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def criterion():
    """Record the outcome of an acceptance criterion for the end-of-run summary."""

    def record(number: int, ok: bool, detail: str = "") -> bool:
        _CRITERIA[number] = (bool(ok), detail)
        print(f"criterion {number}: {'PASS' if ok else 'FAIL'} {detail}")
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        ok, detail = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def mat():
    return MaterialModel()


@pytest.fixture
def cantilever_bcs():
    return BoundaryConditions(supports=[Support(lambda c: c[:, 0] < 1e-9)],
                              point_loads=[PointLoad(2.0, 0.5, 0.0, -1.0)])


@pytest.fixture
def small_mesh():
    return build_mesh(4, 2, 2.0, 2, 16)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
