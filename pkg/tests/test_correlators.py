import json

import numpy as np
import pytest

from qdphotons.correlators import (AveragingWindow, CorrelationGrid, averaged_correlators, emission_spectrum,
                                   g1_grid, g2_grid, g2_hom_grid, sideband_asymmetry, steady_window,
                                   time_average)
from qdphotons.model import ConfigError

from conftest import toy_config
from oracles import regression_oracle


@pytest.fixture(scope="module")
def bath_free():
    cfg = toy_config(scale=0.0)
    c1 = int(round(cfg.pulses.centers[0] / cfg.grid.dt))
    t_steps = np.array([c1 - 6, c1 - 1, c1, c1 + 3, c1 + 40, c1 + 300])
    return cfg, t_steps


def test_bath_free_exact_equals_qrt(bath_free):
    cfg, t_steps = bath_free
    for grid_fn in (g1_grid, g2_grid):
        ex = grid_fn("exact", cfg, t_steps, 200)
        qrt = grid_fn("qrt", cfg, t_steps, 200)
        np.testing.assert_allclose(ex.values, qrt.values, atol=1e-10, rtol=0)


def test_bath_free_grids_match_regression_oracle(bath_free):
    cfg, t_steps = bath_free
    ref1, ref2 = regression_oracle(cfg, t_steps, 200)
    for mode in ("exact", "qrt", "pme"):
        np.testing.assert_allclose(g1_grid(mode, cfg, t_steps, 200).values, ref1, atol=1e-6)
        np.testing.assert_allclose(g2_grid(mode, cfg, t_steps, 200).values, ref2, atol=1e-6)


@pytest.mark.parametrize("mode", ["exact", "qrt", "pme"])
def test_fast_average_matches_brute_force(mode):
    cfg = toy_config(scale=1.0)
    av = averaged_correlators(cfg, mode)
    win = steady_window(cfg)
    g1 = g1_grid(mode, cfg)
    g2 = g2_grid(mode, cfg)
    w = win.weights
    np.testing.assert_allclose(av.g1, w @ g1.values, atol=1e-12)
    np.testing.assert_allclose(av.g1_sq, w @ np.abs(g1.values) ** 2, atol=1e-12)
    np.testing.assert_allclose(av.g2, (w @ g2.values).real, atol=1e-12)
    hom = g2_hom_grid(g1, g2, g1.meta["occupation"])
    np.testing.assert_allclose(av.g2_hom, time_average(hom, w).real, atol=1e-12)
    assert av.meta["invariant_violations"] == 0


def test_memory_matters_for_bath_coupled_grids():
    cfg = toy_config(scale=1.0)
    c1 = int(round(cfg.pulses.centers[0] / cfg.grid.dt))
    ex = g1_grid("exact", cfg, [c1 + 2], 40).values
    qrt = g1_grid("qrt", cfg, [c1 + 2], 40).values
    assert ex[0, 0] == pytest.approx(qrt[0, 0], abs=1e-14)
    assert np.max(np.abs(ex - qrt)) > 1e-3


def test_g2_hom_requires_matching_nodes(bath_free):
    cfg, t_steps = bath_free
    a = g1_grid("qrt", cfg, t_steps, 10)
    b = g2_grid("qrt", cfg, t_steps[:3], 10)
    with pytest.raises(ValueError):
        g2_hom_grid(a, b, np.zeros(10000))


def test_window_and_weights():
    cfg = toy_config(scale=0.0)
    win = steady_window(cfg)
    assert win.weights.sum() == pytest.approx(1.0)
    assert win.nodes[0] * win.dt == pytest.approx(cfg.pulses.centers[1] - 0.5 * cfg.pulses.period)
    assert win.tau_steps * win.dt == pytest.approx(1.5 * cfg.pulses.period)
    with pytest.raises(ConfigError):
        steady_window(cfg.replace(**{"pulses.pulse_count": 1}))
    w = AveragingWindow(0, 8, 4, 1, 0.5)
    np.testing.assert_allclose(w.weights, [0.25, 0.5, 0.25])


def test_time_average_default_trapezoid():
    grid = CorrelationGrid(np.array([0.0, 1.0, 3.0]), np.array([0.0]), np.array([[1.0], [2.0], [4.0]]),
                           "exact", "G2")
    # trapezoid of a piecewise-linear function divided by its range
    assert time_average(grid)[0] == pytest.approx((0.5 * (1 + 2) + 2 * 0.5 * (2 + 4)) / 3)


def test_csv_and_metadata(tmp_path, bath_free):
    cfg, t_steps = bath_free
    g = g1_grid("exact", cfg, t_steps[:2], 3)
    g.meta.pop("occupation")
    g.to_csv(tmp_path / "g1.csv", cfg)
    lines = (tmp_path / "g1.csv").read_text().splitlines()
    assert lines[0] == "t_ps,tau_ps,re,im,mode,kind"
    assert len(lines) == 1 + 2 * 4
    meta = json.loads((tmp_path / "g1.meta.json").read_text())
    assert meta["config_hash"] == cfg.digest()


def test_spectrum_symmetric_without_bath_and_sign_convention():
    dt = 0.5
    tau = dt * np.arange(4000)
    g = np.exp(-0.01 * tau)
    w, s = emission_spectrum(g, dt)
    assert abs(sideband_asymmetry(w, s)) < 1e-10
    # a line displaced to higher energy shows up at positive frequency
    w, s = emission_spectrum(np.exp((0.5j - 0.01) * tau), dt)
    assert w[np.argmax(s)] == pytest.approx(0.5, abs=0.01)
    with pytest.raises(ValueError):
        emission_spectrum(g, dt, tau=tau ** 1.01)
