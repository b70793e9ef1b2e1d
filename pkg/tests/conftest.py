import numpy as np
import pytest

from consflux.mesh import build_cartesian, build_tensor, refine_cells

STRIP_BC = {"top": "neumann", "bottom": "neumann"}


def parabola(x, y, t=0.0):
    return 1.0 - x**2


def parabola_velocity(x, y, t=0.0):
    return np.stack([2.0 * x, np.zeros_like(x)], axis=-1)


@pytest.fixture
def strip4():
    return build_cartesian(4, 1, bc_markers=STRIP_BC)


@pytest.fixture
def grid4():
    return build_cartesian(4, 4, bc_markers=STRIP_BC)


@pytest.fixture
def nonuniform_strip():
    return build_tensor([0.0, 0.15, 0.4, 0.7, 1.0], [0.0, 1.0], bc_markers=STRIP_BC)


@pytest.fixture
def checkerboard():
    """2x2 grid with two diagonally opposite cells refined (four hanging nodes)."""
    return refine_cells(build_cartesian(2, 2, bc_markers=STRIP_BC), [0, 3])


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def criterion(request):
    """Record one PASS/FAIL line for an acceptance criterion and assert it."""
    lines = request.config.__dict__.setdefault("acceptance_lines", [])

    def record(number, title, checks, seconds, limit):
        checks = dict(checks)
        checks[f"runtime {seconds:.1f}s < {limit}s"] = seconds < limit
        failed = [name for name, ok in checks.items() if not ok]
        status = "PASS" if not failed else "FAIL"
        detail = "all checks hold" if not failed else "failed: " + "; ".join(failed)
        line = f"criterion {number:2d} {status}  {title} ({len(checks)} checks, {seconds:.1f}s) {detail}"
        lines.append(line)
        print(line)
        assert not failed, line

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.__dict__.get("acceptance_lines")
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
