import functools

import numpy as np
import pytest

from isoscene.fixtures import generate_random_scene, render_isometric


@functools.lru_cache(maxsize=None)
def scene_and_frame(seed):
    scene = generate_random_scene(seed)
    return scene, render_isometric(scene)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(mod.RESULTS):
            terminalreporter.write_line(line)
