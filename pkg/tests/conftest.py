import numpy as np
import pytest

from qdphotons.model import ExcitonSystem, PhononBath, PhysicsConfig, PulseTrain


def toy_config(scale=1.0, temperature=4.0, **grid):
    """Short pulse train with a fast emitter: the full machinery in seconds."""
    cfg = PhysicsConfig(system=ExcitonSystem(radiative_rate=0.02),
                        bath=PhononBath(scale=scale, temperature=temperature),
                        pulses=PulseTrain(period=400.0, pulse_count=3, first_center=230.0))
    if grid:
        cfg = cfg.replace(**{f"grid.{k}": v for k, v in grid.items()})
    return cfg


@pytest.fixture
def toy():
    return toy_config


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
