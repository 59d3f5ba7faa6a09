"""Model ingredients for a driven two-level quantum dot coupled to LA phonons.

Internal units: hbar = 1, time in ps, frequencies in rad/ps.  Energies are
stored as angular frequencies; multiply by ``HBAR_MEV_PS`` to get meV.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
from scipy import constants as const
from scipy import integrate

HBAR_MEV_PS = const.hbar / const.e * 1e3 * 1e12  # 0.6582... meV ps
KB_MEV_PER_K = const.k / const.e * 1e3  # 0.08617... meV/K

#: Pulse envelopes are cut off beyond this many standard deviations.
PULSE_TRUNCATION_SIGMAS = 8.0


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


class NumericalError(RuntimeError):
    """A quadrature or integrator failed to reach its tolerance."""


@dataclass(frozen=True)
class ExcitonSystem:
    radiative_rate: float = 0.001  # 1/ps
    detuning: float = 0.0  # rad/ps, relative to the polaron-shifted line

    def __post_init__(self):
        if self.radiative_rate < 0:
            raise ConfigError("radiative_rate must be >= 0")


@dataclass(frozen=True)
class PulseTrain:
    area: float = math.pi
    fwhm: float = 3.0  # ps
    period: float = 13160.0  # ps
    pulse_count: int = 3
    first_center: float | None = None  # ps; None -> period/2 + 10*fwhm

    def __post_init__(self):
        if self.fwhm <= 0:
            raise ConfigError("fwhm must be > 0")
        if self.period <= 10 * self.fwhm:
            raise ConfigError("period must exceed 10*fwhm")
        if self.area < 0:
            raise ConfigError("area must be >= 0")
        if self.pulse_count < 1:
            raise ConfigError("pulse_count must be >= 1")

    @property
    def sigma(self) -> float:
        return self.fwhm / (2.0 * math.sqrt(2.0 * math.log(2.0)))

    @property
    def t0(self) -> float:
        if self.first_center is not None:
            return float(self.first_center)
        return 0.5 * self.period + 10.0 * self.fwhm

    @property
    def centers(self) -> np.ndarray:
        return self.t0 + self.period * np.arange(self.pulse_count)

    @property
    def half_width(self) -> float:
        return PULSE_TRUNCATION_SIGMAS * self.sigma


@dataclass(frozen=True)
class PhononBath:
    scale: float = 1.0  # lambda
    temperature: float = 4.0  # K
    dot_radius: float = 3.0  # nm
    d_electron: float = 7.0  # eV
    d_hole: float = -3.5  # eV
    mass_density: float = 5370.0  # kg/m^3
    sound_velocity: float = 5110.0  # m/s

    def __post_init__(self):
        if self.scale < 0:
            raise ConfigError("bath scale lambda must be >= 0")
        if self.temperature <= 0:
            raise ConfigError("temperature must be > 0")
        if self.dot_radius <= 0:
            raise ConfigError("dot_radius must be > 0")
        if self.mass_density <= 0 or self.sound_velocity <= 0:
            raise ConfigError("mass_density and sound_velocity must be > 0")

    @property
    def beta(self) -> float:
        """Inverse temperature in ps (hbar/kT)."""
        return HBAR_MEV_PS / (KB_MEV_PER_K * self.temperature)

    @property
    def radius_time(self) -> float:
        """a / v_s in ps."""
        return self.dot_radius * 1e-9 / self.sound_velocity * 1e12

    @property
    def omega_cutoff(self) -> float:
        """Frequency above which J(omega) < 1e-12 of its maximum (rad/ps)."""
        # J ~ w^3 exp(-w^2 a^2 / (2 v^2)); 1e-12 of the peak is well inside 9 widths
        return 9.0 / self.radius_time

    def material_key(self) -> tuple:
        return (self.dot_radius, self.d_electron, self.d_hole,
                self.mass_density, self.sound_velocity)


@dataclass(frozen=True)
class SimGrid:
    dt: float = 0.5  # ps
    n_c: int = 7
    t_subsample_stride: int = 4
    tau_span: float = 1.5  # tau_max in units of the pulse period
    memory_cap_bytes: int = 2 * 1024 ** 3
    #: fold the influence coefficients beyond the memory window into the last
    #: kept one, so constant paths see the exact long-time phase and damping
    memory_tail: bool = True

    def __post_init__(self):
        if self.dt <= 0:
            raise ConfigError("dt must be > 0")
        if self.n_c < 0:
            raise ConfigError("n_c must be >= 0")
        if self.t_subsample_stride < 1:
            raise ConfigError("t_subsample_stride must be >= 1")

    @property
    def memory_time(self) -> float:
        return self.n_c * self.dt


PRESETS = {
    "desk": {"dt": 0.5, "n_c": 7, "t_subsample_stride": 4},
    "accuracy": {"dt": 0.25, "n_c": 12, "t_subsample_stride": 4},
}


@dataclass(frozen=True)
class NonMarkovOptions:
    pair_samples: int = 32
    t_max: float = 50.0  # ps
    with_drive: bool = False


@dataclass(frozen=True)
class PhysicsConfig:
    system: ExcitonSystem = field(default_factory=ExcitonSystem)
    pulses: PulseTrain = field(default_factory=PulseTrain)
    bath: PhononBath = field(default_factory=PhononBath)
    grid: SimGrid = field(default_factory=SimGrid)
    nonmarkov: NonMarkovOptions = field(default_factory=NonMarkovOptions)

    def __post_init__(self):
        if self.pulses.pulse_count * self.pulses.period < self.pulses.period:
            raise ConfigError("pulse train is empty")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def replace(self, **dotted: Any) -> "PhysicsConfig":
        """Return a copy with dotted-path overrides, e.g. ``replace(**{"bath.scale": 2})``."""
        data = self.to_dict()
        for path, value in dotted.items():
            _set_dotted(data, path, value)
        return config_from_dict(data)


_ALIASES = {"bath.lambda": "bath.scale", "bath.T": "bath.temperature",
            "pulses.T_Pulse": "pulses.period", "system.gamma": "system.radiative_rate"}

_SECTIONS = {"system": ExcitonSystem, "pulses": PulseTrain, "bath": PhononBath,
             "grid": SimGrid, "nonmarkov": NonMarkovOptions}


def _set_dotted(data: dict, path: str, value: Any) -> None:
    path = _ALIASES.get(path, path)
    parts = path.split(".")
    if len(parts) != 2 or parts[0] not in _SECTIONS:
        raise ConfigError(f"unknown configuration path {path!r}")
    section, name = parts
    known = {f.name for f in dataclasses.fields(_SECTIONS[section])}
    if name not in known:
        raise ConfigError(f"unknown configuration path {path!r}")
    data.setdefault(section, {})[name] = value


def config_from_dict(data: dict) -> PhysicsConfig:
    kwargs = {}
    for key, value in data.items():
        if key not in _SECTIONS:
            raise ConfigError(f"unknown configuration section {key!r}")
        cls = _SECTIONS[key]
        known = {f.name for f in dataclasses.fields(cls)}
        section = {}
        for name, v in value.items():
            name = _ALIASES.get(f"{key}.{name}", f"{key}.{name}").split(".")[1]
            if name not in known:
                raise ConfigError(f"unknown configuration path {key}.{name!r}")
            section[name] = v
        try:
            kwargs[key] = cls(**section)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc
    return PhysicsConfig(**kwargs)


def load_config(path: str | Path, overrides: dict | None = None) -> PhysicsConfig:
    data = json.loads(Path(path).read_text())
    for dotted, value in (overrides or {}).items():
        _set_dotted(data, dotted, value)
    return config_from_dict(data)


def apply_preset(config: PhysicsConfig, preset: str) -> PhysicsConfig:
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    return config.replace(**{f"grid.{k}": v for k, v in PRESETS[preset].items()})


# --- closed-form ingredients -------------------------------------------------

def _coupling_prefactor(bath: PhononBath) -> float:
    """omega^3 prefactor of J in ps units: J = pref * w^3 * formfactor^2 (w in rad/ps)."""
    d = const.e  # eV -> J
    pref_si = 1.0 / (4.0 * math.pi ** 2 * bath.mass_density * const.hbar * bath.sound_velocity ** 5)
    # J_si(w_si) = pref_si * w_si^3 * D^2 ; convert w_si = 1e12 w, J = 1e-12 J_si
    return pref_si * d * d * 1e36 * 1e-12


def spectral_density(omega, bath: PhononBath):
    """Super-Ohmic deformation-potential spectral density J(omega) in rad/ps.

    ``J = lambda * w^3 / (4 pi^2 rho hbar v^5) * (D_e F(w) - D_h F(w))^2`` with the
    Gaussian form factor ``F(w) = exp(-w^2 a^2 / (4 v^2))`` shared by electron and hole.
    """
    w = np.asarray(omega, dtype=float)
    if np.any(w < 0):
        raise ValueError("spectral_density is defined for omega >= 0")
    tau_a = bath.radius_time
    ff = np.exp(-(w * tau_a) ** 2 / 4.0)
    amp = bath.d_electron * ff - bath.d_hole * ff
    out = bath.scale * _coupling_prefactor(bath) * w ** 3 * amp ** 2
    return out if out.ndim else float(out)


def spectral_peak(bath: PhononBath) -> float:
    """Frequency of the maximum of J: ``d/dw [w^3 exp(-w^2 a^2 / 2v^2)] = 0`` at ``sqrt(3) v / a``."""
    return math.sqrt(3.0) / bath.radius_time


def polaron_shift(bath: PhononBath) -> float:
    """Polaron shift Omega_p = int_0^inf J(w)/w dw in rad/ps."""
    if bath.scale == 0:
        return 0.0
    # J/w = pref * w^2 * (D_e - D_h)^2 exp(-w^2 a^2/2): closed form Gaussian moment
    tau_a = bath.radius_time
    pref = bath.scale * _coupling_prefactor(bath) * (bath.d_electron - bath.d_hole) ** 2
    closed = pref * math.sqrt(math.pi / 2.0) / tau_a ** 3
    val, err = integrate.quad(lambda w: spectral_density(w, bath) / w if w > 0 else 0.0,
                              0.0, bath.omega_cutoff, limit=200, epsabs=0, epsrel=1e-11)
    if abs(val - closed) > 1e-8 * abs(closed):
        raise NumericalError(f"polaron shift quadrature mismatch: {val} vs {closed} (err {err})")
    return closed


def pulse_envelope(t, train: PulseTrain):
    """Rabi frequency (rad/ps) of the Gaussian pulse train at times ``t``.

    Each Gaussian integrates to ``train.area``; beyond 8 sigma it is set to zero.
    """
    t = np.asarray(t, dtype=float)
    sig = train.sigma
    peak = train.area / (sig * math.sqrt(2.0 * math.pi))
    out = np.zeros_like(t)
    for c in train.centers:
        x = t - c
        inside = np.abs(x) <= train.half_width
        out = out + np.where(inside, peak * np.exp(-0.5 * (x / sig) ** 2), 0.0)
    return out if out.ndim else float(out)


def drive_windows(train: PulseTrain) -> list[tuple[float, float]]:
    """Time intervals on which the (truncated) drive is non-zero."""
    hw = train.half_width
    return [(c - hw, c + hw) for c in train.centers]
