import time

import pytest

from dada.data import ShiftSpec, generate
from dada.evaluation import VARIANTS, ablate
from dada.trainer import HyperParams

BENCH_SPEC = ShiftSpec(generator="two_moons_rotation", angle_deg=40.0, n_source=500, n_target=500,
                       noise_std=0.1, seed=0)
BENCH_SEEDS = (0, 1, 2, 3, 4)


@pytest.fixture(scope="session")
def bench_pair():
    return generate(BENCH_SPEC)


@pytest.fixture(scope="session")
def bench_ablation(bench_pair):
    """All three variants on the 40-degree moons, five seeds, default config; plus wall time."""
    start = time.perf_counter()
    table = ablate(bench_pair, HyperParams(), BENCH_SEEDS, VARIANTS)
    return table, time.perf_counter() - start
