import numpy as np
import pytest

from qdphotons.nonmarkov import (BlochPair, dynamical_map, fibonacci_pairs, non_markovianity, positive_growth,
                                 trace_distance, trace_distance_series)

from conftest import toy_config


def test_trace_distance_examples():
    assert trace_distance(np.diag([0.75, 0.25]), np.diag([0.25, 0.75])) == pytest.approx(0.5)
    p = BlochPair((0.0, 0.0, 1.0))
    assert trace_distance(*p.states) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        trace_distance(np.array([[0.5, 1.0], [0.0, 0.5]]), np.eye(2) / 2)


def test_pairs():
    pairs = fibonacci_pairs(16)
    assert len(pairs) == 16
    assert all(p.n[2] > 0 for p in pairs)
    with pytest.raises(ValueError):
        fibonacci_pairs(0)
    with pytest.raises(ValueError):
        BlochPair((1.0, 1.0, 0.0))


def test_positive_growth():
    assert positive_growth([1.0, 0.8, 0.9, 0.7, 0.75]) == pytest.approx(0.15)
    assert positive_growth([1.0, 0.5, 0.2]) == 0.0


def test_zero_coupling_is_markovian():
    cfg = toy_config(scale=0.0)
    assert non_markovianity(cfg, t_max=40.0).value < 1e-8


def test_map_is_trace_preserving():
    cfg = toy_config(scale=1.0)
    _, maps = dynamical_map(cfg, t_max=20.0)
    np.testing.assert_allclose(np.array([1, 0, 0, 1]) @ maps, np.broadcast_to([1, 0, 0, 1], (maps.shape[0], 4)),
                               atol=1e-10)
    d = trace_distance_series(maps, BlochPair((1.0, 0.0, 0.0)))
    assert d[0] == pytest.approx(1.0)


@pytest.fixture(scope="module")
def measures():
    return {lam: non_markovianity(toy_config(scale=lam), t_max=20.0) for lam in (1.0, 2.0)}


def test_coupling_makes_dynamics_non_markovian(measures):
    assert measures[1.0].value > 1e-4
    assert measures[2.0].value > measures[1.0].value


def test_pair_sampling_converged(measures, tmp_path):
    coarse = measures[2.0]
    fine = non_markovianity(toy_config(scale=2.0), pair_samples=32, t_max=20.0)
    assert fine.value == pytest.approx(coarse.value, rel=0.05)
    coarse.dump_traces(tmp_path / "d.csv")
    lines = (tmp_path / "d.csv").read_text().splitlines()
    assert len(lines) == 2 + coarse.times.size
