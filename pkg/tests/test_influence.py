import math

import numpy as np
import pytest
from scipy import integrate

from qdphotons.influence import (ETA_CACHE_ENV, BathCorrelation, bath_correlation, cached_eta_table,
                                 compute_eta_table, load_eta_table, memory_tail,
                                 polaron_displacement_functions, save_eta_table)
from qdphotons.model import PhononBath, SimGrid, polaron_shift, spectral_density

from oracles import c_quad, eta_cubature


@pytest.fixture(scope="module")
def bath():
    return PhononBath(scale=1.0, temperature=4.0)


def test_correlation_matches_quadrature(bath):
    corr = BathCorrelation(bath)
    for t in (0.0, 0.3, 1.0, 2.5, 7.0):
        assert corr(t) == pytest.approx(c_quad(t, bath), rel=1e-9, abs=1e-12)
    assert bath_correlation(1.0, PhononBath(scale=0.0)) == 0
    # Hermiticity of the correlation: C(-t) = C(t)^*
    assert corr(-1.3) == pytest.approx(np.conj(corr(1.3)), rel=1e-12)


@pytest.mark.parametrize("dt,n_c", [(0.5, 7), (0.25, 4)])
def test_every_eta_cell_matches_2d_cubature(bath, dt, n_c):
    table = compute_eta_table(SimGrid(dt=dt, n_c=n_c), bath)
    ref = [eta_cubature(k, dt, bath) for k in range(n_c + 1)]
    got = table.as_array()
    for k in range(n_c + 1):
        assert abs(got[k] - ref[k]) <= 1e-6 * abs(ref[k]), k


def test_refinement_identity(bath):
    """A coarse cell is the sum of the four fine cells it contains."""
    coarse = compute_eta_table(SimGrid(dt=0.5, n_c=6), bath).as_array()
    fine = compute_eta_table(SimGrid(dt=0.25, n_c=13), bath).as_array()
    assert coarse[0] == pytest.approx(2 * fine[0] + fine[1], rel=1e-12)
    for k in range(1, 7):
        assert coarse[k] == pytest.approx(fine[2 * k - 1] + 2 * fine[2 * k] + fine[2 * k + 1], rel=1e-10)


def test_eta_scaling_and_zero_bath(bath):
    a = compute_eta_table(SimGrid(), bath).as_array()
    b = compute_eta_table(SimGrid(), PhononBath(scale=3.0)).as_array()
    np.testing.assert_allclose(b, 3 * a, rtol=1e-12)
    assert compute_eta_table(SimGrid(), PhononBath(scale=0.0)).is_zero


def test_memory_time_is_short(bath):
    t_mem = BathCorrelation(bath).memory_time()
    assert 0 < t_mem < 10.0


def test_memory_tail_closed_form(bath):
    grid = SimGrid(dt=0.5, n_c=7)
    table = compute_eta_table(grid, bath)
    long = compute_eta_table(grid, bath, n_c=300)
    assert memory_tail(table, bath) == pytest.approx(long.eta_off[7:].sum(), rel=1e-8, abs=1e-14)
    # kept coefficients plus tail: the constant-path rate is pure phase (polaron shift)
    total = table.eta_diag + table.eta_off.sum() + memory_tail(table, bath)
    assert total == pytest.approx(-1j * polaron_shift(bath) * grid.dt, abs=1e-15)


def test_polaron_functions(bath):
    phi, b = polaron_displacement_functions(np.array([0.0, 1.0, 1e4]), bath)
    ref0, _ = integrate.quad(lambda w: spectral_density(w, bath) / w ** 2 / np.tanh(0.5 * bath.beta * w),
                             1e-10, bath.omega_cutoff, limit=400)
    assert phi[0].real == pytest.approx(ref0, rel=1e-9)
    assert phi[0].imag == 0
    assert b == pytest.approx(math.exp(-0.5 * ref0), rel=1e-9)
    assert phi[2] == 0  # decayed
    # second derivative at zero: phi''(0) = -C(0)
    h = 1e-3
    p, _ = polaron_displacement_functions(np.array([-h, 0.0, h]), bath)
    assert (p[0] - 2 * p[1] + p[2]) / h ** 2 == pytest.approx(-BathCorrelation(bath)(0.0), rel=1e-5)


def test_eta_cache_round_trip(tmp_path, monkeypatch, bath):
    table = compute_eta_table(SimGrid(), bath)
    path = tmp_path / "t.bin"
    save_eta_table(path, table, bath)
    back = load_eta_table(path, SimGrid(), bath)
    np.testing.assert_array_equal(back.as_array(), table.as_array())
    with pytest.raises(ValueError):
        load_eta_table(path, SimGrid(n_c=3))
    monkeypatch.setenv(ETA_CACHE_ENV, str(tmp_path / "cache"))
    first = cached_eta_table(SimGrid(), bath)
    files = list((tmp_path / "cache").iterdir())
    assert len(files) == 1
    again = cached_eta_table(SimGrid(), bath)
    np.testing.assert_array_equal(first.as_array(), again.as_array())
    files[0].write_bytes(b"garbage")
    np.testing.assert_array_equal(cached_eta_table(SimGrid(), bath).as_array(), table.as_array())
