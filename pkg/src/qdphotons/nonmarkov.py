"""Trace-distance non-Markovianity of the reduced emitter dynamics.

The measure is the largest total growth of the trace distance between two
evolving states, maximized over pairs of initially orthogonal (antipodal)
pure states on the Bloch sphere.  Growth of the trace distance signals
information flowing back from the phonon bath; dynamics generated by a
(time-dependent) Lindblad equation never shows it.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .liouville import SIGMA_X, SIGMA_Y, SIGMA_Z
from .model import PhysicsConfig
from .pathint import Hybrid, InvariantError, State, build_engine

GOLDEN_ANGLE = math.pi * (3.0 - math.sqrt(5.0))


def trace_distance(rho1: np.ndarray, rho2: np.ndarray, herm_tol: float = 1e-8) -> float:
    """``D = 1/2 sum_k |x_k|`` with ``x_k`` the eigenvalues of ``rho1 - rho2``."""
    diff = np.asarray(rho1, dtype=complex).reshape(2, 2) - np.asarray(rho2, dtype=complex).reshape(2, 2)
    if np.max(np.abs(diff - diff.conj().T)) > herm_tol:
        raise ValueError("trace distance needs Hermitian arguments")
    return 0.5 * float(np.sum(np.abs(np.linalg.eigvalsh(0.5 * (diff + diff.conj().T)))))


@dataclass(frozen=True)
class BlochPair:
    """Antipodal pure states ``rho_pm = (1 +- n.sigma) / 2``."""

    n: tuple[float, float, float]

    def __post_init__(self):
        if abs(np.linalg.norm(self.n) - 1.0) > 1e-12:
            raise ValueError("Bloch vector must have unit length")

    @property
    def states(self) -> tuple[np.ndarray, np.ndarray]:
        nsig = self.n[0] * SIGMA_X + self.n[1] * SIGMA_Y + self.n[2] * SIGMA_Z
        eye = np.eye(2, dtype=complex)
        return 0.5 * (eye + nsig), 0.5 * (eye - nsig)


def fibonacci_pairs(count: int) -> list[BlochPair]:
    """``count`` antipodal pairs whose ``+`` members form a Fibonacci lattice on
    the upper hemisphere (so that all ``2 count`` points cover the sphere)."""
    if count < 1:
        raise ValueError("pair_samples must be >= 1")
    out = []
    for i in range(count):
        z = 1.0 - (i + 0.5) / count
        r = math.sqrt(max(0.0, 1.0 - z * z))
        a = i * GOLDEN_ANGLE
        v = np.array([r * math.cos(a), r * math.sin(a), z])
        out.append(BlochPair(tuple(v / np.linalg.norm(v))))
    return out


def dynamical_map(config: PhysicsConfig, with_drive: bool | None = None, t_max: float | None = None,
                  engine=None) -> tuple[np.ndarray, np.ndarray]:
    """Reduced dynamical map ``Lambda(t)`` on the step grid, shape ``(steps, 4, 4)``.

    Column ``j`` is the image of the Liouville basis vector ``e_j`` prepared
    in a product state with the thermal bath.  Without drive the map starts
    at ``t = 0`` and the pulses are switched off; with drive it starts at the
    leading edge of the first pulse.

    Returns
    -------
    times : ndarray
        Elapsed time since preparation (ps).
    maps : ndarray
    """
    opts = config.nonmarkov
    with_drive = opts.with_drive if with_drive is None else with_drive
    t_max = opts.t_max if t_max is None else t_max
    if not with_drive:
        config = config.replace(**{"pulses.area": 0.0})
    engine = engine or build_engine(config, "exact")
    dt = config.grid.dt
    start = 0
    if with_drive:
        p = config.pulses
        start = max(0, int(math.floor((p.centers[0] - p.half_width) / dt)))
    steps = int(round(t_max / dt))
    hyb = Hybrid(engine, np.eye(4), steps + 1)
    out, _ = hyb.run(State("seed", np.eye(4, dtype=complex), start), start + steps)
    # out[j, input, readout] -> maps[j, readout, input]
    return dt * np.arange(steps + 1), np.transpose(out, (0, 2, 1))


def trace_distance_series(maps: np.ndarray, pair: BlochPair) -> np.ndarray:
    """``D(t)`` for one pair evolved with the dynamical map."""
    r1, r2 = pair.states
    dv = maps @ (r1 - r2).reshape(4)
    diff = dv.reshape(-1, 2, 2)
    herm = 0.5 * (diff + np.conj(np.transpose(diff, (0, 2, 1))))
    if np.max(np.abs(diff - herm)) > 1e-8:
        raise InvariantError("evolved difference operator is not Hermitian")
    return 0.5 * np.sum(np.abs(np.linalg.eigvalsh(herm)), axis=1)


def positive_growth(d: np.ndarray) -> float:
    """Sum of the positive increments of ``D`` on the step grid."""
    inc = np.diff(np.asarray(d, dtype=float))
    return float(np.sum(inc[inc > 0]))


@dataclass
class NonMarkovianity:
    """Measure value, maximizing pair and the per-pair data."""

    value: float
    pair: BlochPair
    times: np.ndarray
    per_pair: list[tuple[BlochPair, float]]
    traces: np.ndarray  # (pairs, steps) D(t)

    def dump_traces(self, path: str | Path) -> None:
        """CSV with one column per pair: ``t_ps, D_0, D_1, ...``."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t_ps"] + [f"D_{i}" for i in range(len(self.per_pair))])
            w.writerow(["#n"] + [" ".join(f"{c:.12g}" for c in p.n) for p, _ in self.per_pair])
            for j, t in enumerate(self.times):
                w.writerow([f"{t:.6g}"] + [f"{v:.15g}" for v in self.traces[:, j]])


def non_markovianity(config: PhysicsConfig, pair_samples: int | None = None,
                     with_drive: bool | None = None, t_max: float | None = None) -> NonMarkovianity:
    """Trace-distance measure ``N = max_pairs sum_{dD > 0} dD``."""
    pair_samples = config.nonmarkov.pair_samples if pair_samples is None else int(pair_samples)
    pairs = fibonacci_pairs(pair_samples)
    times, maps = dynamical_map(config, with_drive, t_max)
    traces = np.array([trace_distance_series(maps, p) for p in pairs])
    values = [positive_growth(d) for d in traces]
    best = int(np.argmax(values))
    return NonMarkovianity(values[best], pairs[best], times, list(zip(pairs, values)), traces)
