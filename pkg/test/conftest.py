import math

import numpy as np
import pytest

from depthsr.data import DepthMap


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run toy-scale training tests")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


def pytest_assertrepr_compare(op, left, right):
    if isinstance(left, DepthMap) and isinstance(right, DepthMap) and op == "==":
        diff = np.abs(left.values - right.values).max() if left.size == right.size else math.inf
        return ["DepthMaps differ:", f"   sizes: {left.size} vs {right.size}, max abs diff {diff}"]
