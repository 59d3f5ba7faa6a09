import json
import math

import numpy as np
import pytest
from scipy import integrate

from qdphotons.model import (PRESETS, ConfigError, PhononBath, PhysicsConfig, PulseTrain, SimGrid,
                             apply_preset, config_from_dict, drive_windows, load_config, polaron_shift,
                             pulse_envelope, spectral_density, spectral_peak)


def test_defaults_round_trip_through_dict():
    cfg = PhysicsConfig()
    assert config_from_dict(cfg.to_dict()) == cfg
    assert cfg.digest() == config_from_dict(cfg.to_dict()).digest()


def test_dotted_replace_and_aliases():
    cfg = PhysicsConfig().replace(**{"bath.lambda": 2.5, "bath.T": 30, "system.gamma": 0.002})
    assert cfg.bath.scale == 2.5
    assert cfg.bath.temperature == 30
    assert cfg.system.radiative_rate == 0.002
    assert cfg.digest() != PhysicsConfig().digest()


@pytest.mark.parametrize("path", ["bath.nope", "grid", "foo.dt", "grid.dt.x"])
def test_unknown_paths_rejected(path):
    with pytest.raises(ConfigError):
        PhysicsConfig().replace(**{path: 1})


@pytest.mark.parametrize("kwargs", [dict(scale=-1), dict(temperature=0), dict(dot_radius=-3)])
def test_bath_validation(kwargs):
    with pytest.raises(ConfigError):
        PhononBath(**kwargs)


def test_grid_validation():
    with pytest.raises(ConfigError):
        SimGrid(dt=0)
    with pytest.raises(ConfigError):
        SimGrid(n_c=-1)


def test_presets():
    for name, values in PRESETS.items():
        cfg = apply_preset(PhysicsConfig(), name)
        assert cfg.grid.dt == values["dt"] and cfg.grid.n_c == values["n_c"]
    with pytest.raises(ConfigError):
        apply_preset(PhysicsConfig(), "fast")


def test_load_config(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"bath": {"lambda": 3, "T": 10}, "grid": {"dt": 0.25}}))
    cfg = load_config(path, overrides={"bath.scale": 4})
    assert (cfg.bath.scale, cfg.bath.temperature, cfg.grid.dt) == (4, 10, 0.25)
    path.write_text(json.dumps({"bath": {"colour": 1}}))
    with pytest.raises(ConfigError):
        load_config(path)


def test_spectral_density_properties():
    bath = PhononBath(scale=1.0)
    w = np.linspace(0, bath.omega_cutoff, 2001)
    j = spectral_density(w, bath)
    assert j[0] == 0 and np.all(j >= 0)
    # linear in lambda
    j2 = spectral_density(w, PhononBath(scale=2.0))
    np.testing.assert_allclose(j2, 2 * j, rtol=1e-12)
    # analytic maximum and negligible weight beyond the cut-off
    wp = spectral_peak(bath)
    assert spectral_density(wp, bath) >= j.max() * (1 - 1e-6)
    assert spectral_density(bath.omega_cutoff, bath) < 1e-12 * spectral_density(wp, bath)
    with pytest.raises(ValueError):
        spectral_density(-1.0, bath)


def test_radius_time_and_peak():
    bath = PhononBath()
    assert bath.radius_time == pytest.approx(3e-9 / 5110 * 1e12)
    assert spectral_peak(bath) == pytest.approx(math.sqrt(3) / bath.radius_time)


def test_polaron_shift_closed_form_vs_quadrature():
    bath = PhononBath(scale=1.0)
    ref, _ = integrate.quad(lambda w: spectral_density(w, bath) / w, 1e-12, 40.0, limit=400)
    assert polaron_shift(bath) == pytest.approx(ref, rel=1e-9)
    assert polaron_shift(PhononBath(scale=0.0)) == 0.0
    # about 0.15 meV for GaAs with a = 3 nm
    assert 0.2 < polaron_shift(bath) < 0.25


def test_pulse_area_and_windows():
    train = PulseTrain()
    c = train.centers[0]
    area, _ = integrate.quad(lambda t: pulse_envelope(t, train), c - 20, c + 20, points=[c], limit=200)
    assert area == pytest.approx(math.pi, rel=1e-12)
    assert train.sigma == pytest.approx(3.0 / 2.3548200450309493)
    assert train.t0 == pytest.approx(train.period / 2 + 30)
    for (a, b), cc in zip(drive_windows(train), train.centers):
        assert pulse_envelope(a - 1e-6, train) == 0.0
        assert b - a == pytest.approx(16 * train.sigma)
        assert a < cc < b


def test_pulse_train_validation():
    with pytest.raises(ConfigError):
        PulseTrain(period=20.0)
    with pytest.raises(ConfigError):
        PulseTrain(pulse_count=0)
