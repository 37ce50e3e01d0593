import numpy as np
import pytest

from augrmixat.data import make_shapes


def central_diff(f, x, h=1e-4, coords=None):
    """Central finite differences of scalar ``f`` w.r.t. array ``x`` (modified in place, restored)."""
    flat = x.reshape(-1)
    coords = range(flat.size) if coords is None else coords
    out = {}
    for i in coords:
        old = flat[i]
        flat[i] = old + h
        up = f()
        flat[i] = old - h
        down = f()
        flat[i] = old
        out[i] = (up - down) / (2 * h)
    return out


def smooth_coords(f, x, h=1e-4, coords=None, tol=1e-7):
    """Central differences, dropping coordinates whose h and h/2 estimates disagree (a ReLU/max kink
    inside the stencil)."""
    a = central_diff(f, x, h, coords)
    b = central_diff(f, x, h / 2, a.keys())
    return {i: a[i] for i in a if abs(a[i] - b[i]) <= tol * max(1.0, abs(a[i]))}


def rel_err(analytic, numeric, floor=1e-6):
    analytic, numeric = np.asarray(analytic, float), np.asarray(numeric, float)
    return float(np.max(np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)))


@pytest.fixture(scope="session")
def shapes_small():
    X, y = make_shapes(90, num_classes=3, size=8, seed=3)
    return X, y


_CRITERIA = {}
_NOTES = {}


def note(criterion: int, text: str):
    """Attach a detail line to a criterion's summary entry."""
    _NOTES.setdefault(str(criterion), []).append(text)


def pytest_runtest_logreport(report):
    if "test_acceptance.py::test_criterion_" in report.nodeid and (report.when == "call" or report.failed):
        name = report.nodeid.split("::")[-1][len("test_criterion_"):]
        _CRITERIA.setdefault(name, ("PASS" if report.passed else "FAIL", report.duration))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_CRITERIA, key=lambda s: int(s.split("_")[0])):
        verdict, secs = _CRITERIA[name]
        num, _, label = name.partition("_")
        terminalreporter.write_line(f"{verdict}  criterion {num}: {label.replace('_', ' ')}  ({secs:.1f} s)")
        for line in _NOTES.get(num, []):
            terminalreporter.write_line(f"      {line}")
