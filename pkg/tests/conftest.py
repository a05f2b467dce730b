import numpy as np
import pytest

from metareg.core import RegParams
from metareg.flow import lipschitz_project


def smooth_params(rng, steps, h, w, amp=0.5, kappa=0.45, r_amp=0.3):
    """Random parameters whose per-step projection stays inactive."""
    dt = 1.0 / steps
    v = np.stack([lipschitz_project(rng.normal(0.0, amp, (2, h, w)), dt, kappa) for _ in range(steps)])
    return RegParams(v, rng.normal(0.0, r_amp, (steps, h, w)))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(results):
        ok, detail = results[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {detail}")
