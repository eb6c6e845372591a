import dataclasses
import time

import pytest

from spadsim.calibrate import dark_config
from spadsim.characterize import estimate_dcr, report
from spadsim.detector import OperatingPoint
from spadsim.engine import SimConfig, run

ACCEPTANCE_SEED = 2026
_verdicts: list[str] = []
ELAPSED: dict[str, float] = {}


@pytest.fixture
def verdict():
    """Record a one-line PASS/FAIL for the acceptance summary."""
    def record(label, ok, detail):
        _verdicts.append(f"{'PASS' if ok else 'FAIL'}  {label}: {detail}")
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _verdicts:
        terminalreporter.section("acceptance criteria")
        for line in _verdicts:
            terminalreporter.write_line(line)


def closed_loop(v_ex, temperature, duration_s, seed=ACCEPTANCE_SEED):
    cfg = SimConfig(duration_s=duration_s, seed=seed, operating=OperatingPoint(v_ex, temperature))
    dark = run(dark_config(cfg))
    dcr = estimate_dcr(dark.times_ps, dark.kinds, duration_s)
    light = run(cfg)
    return light, dark, report(light, dcr)


@pytest.fixture(scope="session")
def reference():
    """Laser + dark runs at 45 V / 268 K, 10 s (10^6 laser pulses)."""
    start = time.perf_counter()
    out = closed_loop(45.0, 268.0, 10.0)
    ELAPSED["reference"] = time.perf_counter() - start
    return out


@pytest.fixture(scope="session")
def warm():
    return closed_loop(45.0, 288.0, 10.0)


def replace_detector(cfg, **kw):
    return dataclasses.replace(cfg, detector=dataclasses.replace(cfg.detector, **kw))
