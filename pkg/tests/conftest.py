import numpy as np
import pytest

from cosapd.presets import DESK_DELAY_SPAN, desk_params
from cosapd.quadcs import QuadCSConfig, build_measurement_matrix
from cosapd.waveform import build_dictionary


@pytest.fixture(scope="session")
def params():
    return desk_params()


@pytest.fixture(scope="session")
def dictionary(params):
    return build_dictionary(params, DESK_DELAY_SPAN)


@pytest.fixture(scope="session")
def matrix_b4(params, dictionary):
    return build_measurement_matrix(QuadCSConfig(params.bandwidth / 4, chip_seed=0), dictionary)


@pytest.fixture(scope="session")
def matrix_b8(params, dictionary):
    return build_measurement_matrix(QuadCSConfig(params.bandwidth / 8, chip_seed=0), dictionary)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    RESULTS = mod.RESULTS
    terminalreporter.section("acceptance criteria")
    for cid in sorted(RESULTS, key=lambda c: int(c[1:])):
        ok, detail = RESULTS[cid]
        terminalreporter.write_line(f"{cid:>4} {'PASS' if ok else 'FAIL'}  {detail}")
