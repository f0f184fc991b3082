import numpy as np
import pytest

from ldsb.datasets import IfmSpec, make_splits
from ldsb.training import fit_network, preset


@pytest.fixture(scope="session")
def ifm_splits():
    return make_splits(IfmSpec(), "ifm")


@pytest.fixture(scope="session")
def rich_net(ifm_splits):
    net, log = fit_network(ifm_splits["train"], "rich", preset("rich", seed=0))
    return net, log


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(RESULTS):
        ok, detail = RESULTS[num]
        terminalreporter.write_line(f"criterion {num:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
