import numpy as np
import pytest
from scipy import integrate

from qdphotons.influence import polaron_displacement_functions
from qdphotons.liouville import TRACE, lab_generators
from qdphotons.model import PhononBath, pulse_envelope
from qdphotons.pathint import propagate_single_time
from qdphotons.pme import PolaronGenerator, PolaronKernels, pme_propagate

from conftest import toy_config


def test_bath_free_generator_is_lab_generator():
    cfg = toy_config(scale=0.0)
    gen = PolaronGenerator(cfg)
    l0, l1 = lab_generators(cfg)
    for t in (0.0, cfg.pulses.centers[0] - 1.3, cfg.pulses.centers[0]):
        np.testing.assert_allclose(gen(t), l0 + pulse_envelope(t, cfg.pulses) * l1, atol=1e-14)


def test_bath_free_trajectory_matches_lindblad():
    cfg = toy_config(scale=0.0)
    t_max = cfg.pulses.centers[0] + 40
    a = pme_propagate(cfg, t_max=t_max)
    b = propagate_single_time(cfg, "qrt", t_max=t_max)
    np.testing.assert_allclose(a.rho, b.rho, atol=1e-8)


def test_generator_preserves_trace_and_hermiticity(rng):
    cfg = toy_config(scale=2.0, temperature=20.0)
    gen = PolaronGenerator(cfg)
    t = cfg.pulses.centers[0] + 0.7
    lv = gen(t)
    np.testing.assert_allclose(TRACE @ lv, 0, atol=1e-12)
    x = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
    rho = x @ x.conj().T
    d = (lv @ rho.ravel()).reshape(2, 2)
    np.testing.assert_allclose(d, d.conj().T, atol=1e-12)


def test_kernels_match_adaptive_quadrature():
    bath = PhononBath(scale=1.0, temperature=10.0)
    ker = PolaronKernels(bath)
    b = ker.B

    def gfun(s):
        phi, _ = polaron_displacement_functions(np.array([s]), bath)
        return phi[0]

    nu = 0.8
    for which, f in ((0, lambda p: b * b * (np.cosh(p) - 1)), (1, lambda p: b * b * np.sinh(p))):
        re = integrate.quad(lambda s: (f(gfun(s)) * np.exp(-1j * nu * s)).real, 0, 40, limit=400)[0]
        im = integrate.quad(lambda s: (f(gfun(s)) * np.exp(-1j * nu * s)).imag, 0, 40, limit=400)[0]
        got = ker(np.array([nu]))[which][0]
        assert got == pytest.approx(re + 1j * im, rel=1e-6)


def test_weak_coupling_occupation_close_to_exact():
    cfg = toy_config(scale=0.1)
    t_max = cfg.pulses.centers[0] + 40
    a = pme_propagate(cfg, t_max=t_max).occupation[-1]
    b = propagate_single_time(cfg, "exact", t_max=t_max).occupation[-1]
    assert a == pytest.approx(b, rel=1e-2)


def test_pme_violations_only_warn(monkeypatch, caplog):
    from qdphotons import pathint
    with pytest.raises(pathint.InvariantError):
        pathint.report_violations(3, "exact")
    pathint.report_violations(3, "pme")
    assert "violated" in caplog.text
