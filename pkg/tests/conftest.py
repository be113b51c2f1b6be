import numpy as np
import pytest
from hypothesis import settings

from jetdyn.engine import ENGINES, PRESETS
from jetdyn.simulation import (ExcitationSpec, Segment, SimConfig,
                               gen_excitation, simulate)

# property tests share fixtures with sim-backed tests; wall-clock deadlines
# only produce flaky failures there
settings.register_profile("suite", deadline=None, max_examples=50)
settings.load_profile("suite")


@pytest.fixture(scope="session")
def p100():
    return PRESETS["p100rx-ekf"]


@pytest.fixture(scope="session")
def p220():
    return PRESETS["p220rxi-ekf"]


@pytest.fixture(scope="session")
def p100_spec():
    return ENGINES["p100rx"]


def bench_excitation() -> ExcitationSpec:
    """240 s mixed profile rich enough for the gray-box identifiers."""
    return ExcitationSpec(segments=(
        Segment("hold", 6.0, 40.0),
        Segment("chirp", 70.0, 55.0, amplitude=20.0, f_start=0.02, f_end=0.25),
        Segment("sine", 40.0, 62.0, amplitude=22.0, f_start=0.05),
        Segment("ramp", 8.0, 45.0, amplitude=25.0),
        Segment("sine", 40.0, 70.0, amplitude=12.0, f_start=0.12),
        Segment("chirp", 60.0, 50.0, amplitude=18.0, f_start=0.03, f_end=0.2),
        Segment("ramp", 16.0, 68.0, amplitude=-28.0),
    ))


@pytest.fixture(scope="session")
def bench_u():
    return gen_excitation(bench_excitation(), 0.01)


@pytest.fixture(scope="session")
def clean_run(p100, bench_u):
    """Noiseless 240 s record; series and truth coincide."""
    return simulate(p100, bench_u, SimConfig(dt=0.01, substeps=10))


@pytest.fixture(scope="session")
def noisy_run(p100, bench_u):
    """Same record with the bench's 7 N^2 measurement noise."""
    return simulate(p100, bench_u,
                    SimConfig(dt=0.01, substeps=10, noise_variance=7.0,
                              rng_seed=11))
