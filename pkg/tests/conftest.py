import os

os.environ.setdefault("NUMBA_THREADING_LAYER", "workqueue")

import numpy as np  # noqa: E402
import pytest  # noqa: E402
from hypothesis import HealthCheck, settings  # noqa: E402

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def plate_run(tmp_path_factory):
    """Desk-scale plate-with-hole run, written to a temporary directory."""
    from xosbpd.presets import preset
    from xosbpd.runner import run

    out = tmp_path_factory.mktemp("plate2d")
    return run(preset("plate2d"), out_dir=out), out


ACCEPTANCE_LINES = []


@pytest.fixture
def record_criterion():
    """Collect one PASS/FAIL line per acceptance criterion for the run summary."""
    def record(number, passed, detail, seconds):
        line = f"CRITERION {number}: {'PASS' if passed else 'FAIL'}  {detail}  ({seconds:.1f} s)"
        ACCEPTANCE_LINES.append(line)
        print(line)
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
