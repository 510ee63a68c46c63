import pytest

import simsketch


@pytest.fixture(scope="session", autouse=True)
def _warm_kernels():
    # compile-and-cache every kernel before any timed or counted work
    simsketch.warmup()
