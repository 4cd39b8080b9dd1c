import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

import acceptance_registry
from airwaygan.scenes import SceneParams, generate_synthetic_scene


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    if report.when != "call":
        return
    marker = item.get_closest_marker("criterion")
    if marker is not None:
        status = "PASS" if report.passed else "FAIL"
        acceptance_registry.record(marker.args[0], marker.args[1], status)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if acceptance_registry.RESULTS:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in acceptance_registry.lines():
            terminalreporter.write_line(line)


@pytest.fixture
def one_lumen_scene():
    """64x64, single lumen at the center, radius 20, no noise."""
    params = SceneParams(height=64, width=64, centers=((32, 32),), radii=(20.0,),
                         noise_amplitude=0.0)
    return generate_synthetic_scene(params, seed=0)


@pytest.fixture
def two_lumen_scene():
    """96x96 scene with two well-separated lumens (centers 80 px apart)."""
    params = SceneParams(height=96, width=96, centers=((16, 20), (80, 68)),
                         radii=(15.0, 15.0), noise_amplitude=0.0)
    return generate_synthetic_scene(params, seed=1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
