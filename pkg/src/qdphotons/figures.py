"""Figures of merit: single-photon purity, indistinguishability, brightness and
the relative error of the regression approximation."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import trapezoid

from .correlators import AveragedCorrelators, averaged_correlators
from .model import PhysicsConfig
from .pathint import PathEngine


def _window_ratio(curve: np.ndarray, dt: float, period: float) -> float:
    """Central-peak over side-peak integral of a t-averaged curve given on tau >= 0.

    The central window ``[-T/2, T/2]`` uses ``G(-tau) = G(tau)``.
    """
    curve = np.asarray(curve, dtype=float)
    half = int(round(0.5 * period / dt))
    if curve.size < 3 * half + 1:
        raise ValueError("tau range must cover 3/2 of the pulse period")
    central = 2.0 * trapezoid(curve[:half + 1], dx=dt)
    side = trapezoid(curve[half:3 * half + 1], dx=dt)
    if side <= 0:
        raise ValueError("side-peak integral vanishes; a train of at least 2 pulses is required")
    return central / side


def purity(g2_tau: np.ndarray, dt: float, period: float) -> float:
    """``P = 1 - p`` with ``p`` the ratio of the central to the side coincidence peak."""
    return 1.0 - _window_ratio(g2_tau, dt, period)


def indistinguishability(g2hom_tau: np.ndarray, dt: float, period: float) -> float:
    """``I = 1 - p_HOM`` from the t-averaged Hong-Ou-Mandel correlation."""
    return 1.0 - _window_ratio(g2hom_tau, dt, period)


def brightness(occupation: np.ndarray, dt: float, center: float, period: float, gamma: float) -> float:
    """Photons emitted per pulse, ``gamma * int n(t) dt`` over ``[center - T/2, center + T/2]``.

    Normalized to one photon, the yield of an ideal delta-pulse excitation
    of an emitter in its ground state.
    """
    occupation = np.asarray(occupation, dtype=float)
    lo = int(round((center - 0.5 * period) / dt))
    hi = int(round((center + 0.5 * period) / dt))
    if lo < 0 or hi >= occupation.size:
        raise ValueError("brightness window lies outside the trajectory")
    return gamma * trapezoid(occupation[lo:hi + 1], dx=dt)


def qrt_error(m_exact: float, m_approx: float) -> float:
    """Relative error ``|(M - M_approx) / M|``."""
    if m_exact == 0:
        raise ValueError("relative error undefined for M = 0")
    return abs((m_exact - m_approx) / m_exact)


@dataclass
class FiguresOfMerit:
    """P, I, B as fractions (multiply by 100 for percent)."""

    mode: str
    P: float
    I: float
    B: float
    dt: float
    n_c: int
    stride: int
    meta: dict = field(default_factory=dict)

    def percent(self) -> dict:
        return {"P": 100 * self.P, "I": 100 * self.I, "B": 100 * self.B}


def figures_from_curves(config: PhysicsConfig, curves: AveragedCorrelators) -> FiguresOfMerit:
    p, g = config.pulses, config.grid
    dt = curves.window.dt
    P = purity(curves.g2, dt, p.period)
    I = indistinguishability(curves.g2_hom, dt, p.period)
    B = brightness(curves.trajectory.occupation, dt, p.centers[0], p.period, config.system.radiative_rate)
    return FiguresOfMerit(curves.mode, P, I, B, g.dt, g.n_c, curves.window.stride, dict(curves.meta))


def compute_figures(config: PhysicsConfig, mode: str = "exact", engine: PathEngine | None = None,
                    stride: int | None = None) -> tuple[FiguresOfMerit, AveragedCorrelators]:
    curves = averaged_correlators(config, mode, engine=engine, stride=stride)
    return figures_from_curves(config, curves), curves
