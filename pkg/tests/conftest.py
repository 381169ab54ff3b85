import sys

import numpy as np
import pytest
from hypothesis import settings

from spatial_al import kernels
from spatial_al.regions import build_grid, init_labeled_pool
from spatial_al.scoring import ScoreTable

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


def pytest_terminal_summary(terminalreporter):
    # acceptance lines are collected by tests/test_acceptance.py when it ran
    mod = sys.modules.get("tests.test_acceptance")
    lines = mod.report_lines() if mod else []
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)


@pytest.fixture(params=sorted(kernels.BACKENDS))
def backend(request):
    return kernels.BACKENDS[request.param]


def random_pool(rng, n_images=2, shape=(64, 64), region_size=16, labeled=3, num_classes=5):
    grid = build_grid([shape] * n_images, region_size)
    state = init_labeled_pool(grid, labeled, int(rng.integers(1 << 30)))
    scores = ScoreTable.from_raw(rng.uniform(0, np.log(num_classes), len(grid)), num_classes)
    return grid, state, scores
