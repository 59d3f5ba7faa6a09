"""Liouville-space conventions and per-step propagators of the two-level emitter.

Basis ordering: ``G = 0`` (ground), ``X = 1`` (exciton).  A density matrix is
vectorized row-major, ``vec(rho)[2a + b] = rho[a, b]``, so the Liouville index
order is ``[GG, GX, XG, XX]`` and ``A rho B`` maps to ``kron(A, B.T)``.
"""
from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import expm

from .model import PhysicsConfig, drive_windows, polaron_shift, pulse_envelope

GG, GX, XG, XX = 0, 1, 2, 3
#: ket and bra labels (s+, s-) of each Liouville index
KET = np.array([0, 0, 1, 1])
BRA = np.array([0, 1, 0, 1])

SIGMA = np.array([[0, 1], [0, 0]], dtype=complex)  # |G><X|
SIGMA_DAG = SIGMA.conj().T
NUMBER = SIGMA_DAG @ SIGMA
IDENTITY2 = np.eye(2, dtype=complex)
SIGMA_X = SIGMA + SIGMA_DAG
SIGMA_Y = 1j * (SIGMA - SIGMA_DAG)  # i(|G><X| - |X><G|)
SIGMA_Z = np.diag([-1.0, 1.0]).astype(complex)  # +1 on the exciton


def vec(rho: np.ndarray) -> np.ndarray:
    return np.asarray(rho, dtype=complex).reshape(4)


def unvec(v: np.ndarray) -> np.ndarray:
    return np.asarray(v, dtype=complex).reshape(2, 2)


def left(op: np.ndarray) -> np.ndarray:
    """Superoperator of ``rho -> op @ rho``."""
    return np.kron(op, IDENTITY2)


def right(op: np.ndarray) -> np.ndarray:
    """Superoperator of ``rho -> rho @ op``."""
    return np.kron(IDENTITY2, op.T)


def commutator(h: np.ndarray) -> np.ndarray:
    return left(h) - right(h)


def dissipator(c: np.ndarray) -> np.ndarray:
    """Lindblad dissipator ``c rho c^dag - {c^dag c, rho}/2``."""
    cdc = c.conj().T @ c
    return np.kron(c, c.conj()) - 0.5 * (left(cdc) + right(cdc))


def readout_vector(op: np.ndarray) -> np.ndarray:
    """Row vector ``o`` with ``o @ vec(rho) = Tr[op rho]``."""
    return np.asarray(op, dtype=complex).T.reshape(4)


TRACE = readout_vector(IDENTITY2)
OCCUPATION = readout_vector(NUMBER)
#: readout of G1: Tr[sigma^dag A] = A[G, X]
COHERENCE = readout_vector(SIGMA_DAG)


def is_density_matrix(rho: np.ndarray, trace_tol=1e-8, herm_tol=1e-9, pos_tol=1e-6) -> bool:
    rho = np.asarray(rho).reshape(2, 2)
    if abs(np.trace(rho) - 1.0) > trace_tol:
        return False
    if np.max(np.abs(rho - rho.conj().T)) > herm_tol:
        return False
    return bool(np.min(np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))) >= -pos_tol)


# --- generators ---------------------------------------------------------------

def lab_detuning(config: PhysicsConfig) -> float:
    """Exciton-laser detuning in the rotating frame before the phonon shift.

    The laser is tuned to the polaron-shifted line plus ``system.detuning``;
    the phonon bath itself lowers the line by Omega_p through the influence
    functional, so the bare rotating-frame detuning is ``Omega_p - detuning``.
    """
    return polaron_shift(config.bath) - config.system.detuning


def lab_generators(config: PhysicsConfig, detuning: float | None = None):
    """Return ``(L0, L1)`` with ``L(t) = L0 + Omega(t) L1``."""
    delta = lab_detuning(config) if detuning is None else detuning
    gamma = config.system.radiative_rate
    l0 = -1j * commutator(delta * NUMBER) + gamma * dissipator(SIGMA)
    l1 = -1j * commutator(-0.5 * SIGMA_X)
    return l0, l1


def reachability_mask(pattern: np.ndarray) -> np.ndarray:
    """Entries of ``exp(L t)`` that can be non-zero given the sparsity of ``L``."""
    adj = (np.abs(pattern) > 0) | np.eye(pattern.shape[0], dtype=bool)
    reach = adj.copy()
    for _ in range(pattern.shape[0]):
        nxt = (reach.astype(int) @ adj.astype(int)) > 0
        if np.array_equal(nxt, reach):
            break
        reach = nxt
    return reach


def magnus_step(gen: Callable[[float], np.ndarray], t0: float, dt: float, substeps: int = 16,
                mask: np.ndarray | None = None) -> np.ndarray:
    """Propagator over ``[t0, t0 + dt]`` of ``d rho/dt = gen(t) rho``.

    Fourth-order Magnus expansion with two Gauss points per substep.
    """
    h = dt / substeps
    c = math.sqrt(3.0) / 6.0
    prop = np.eye(4, dtype=complex)
    for j in range(substeps):
        ta = t0 + j * h
        a1 = gen(ta + (0.5 - c) * h)
        a2 = gen(ta + (0.5 + c) * h)
        omega = 0.5 * h * (a1 + a2) + (math.sqrt(3.0) / 12.0) * h * h * (a2 @ a1 - a1 @ a2)
        prop = expm(omega) @ prop
    if mask is not None:
        prop = np.where(mask, prop, 0.0)
    return prop


class StepPropagators:
    """Per-step 4x4 system propagators on a uniform grid.

    Step ``n`` maps the state at ``n*dt`` to ``(n+1)*dt``.  Steps that do not
    overlap a drive window share one drive-free propagator.

    Parameters
    ----------
    generator : callable
        ``generator(t)`` returns the 4x4 Liouvillian at time ``t``.
    free_generator : ndarray
        Liouvillian outside the drive windows.
    windows : sequence of (start, stop)
        Time intervals on which the generator differs from ``free_generator``.
    dt : float
    substeps : int
        Magnus substeps per driven step.
    """

    def __init__(self, generator, free_generator: np.ndarray,
                 windows: Sequence[tuple[float, float]], dt: float, substeps: int = 16,
                 full_pattern: np.ndarray | None = None):
        self.generator = generator
        self.dt = float(dt)
        self.substeps = substeps
        self.windows = [(float(a), float(b)) for a, b in windows]
        self.free_mask = reachability_mask(free_generator)
        self.free = np.where(self.free_mask, expm(free_generator * self.dt), 0.0)
        self.free_generator = free_generator
        pattern = full_pattern if full_pattern is not None else np.ones((4, 4))
        self.drive_mask = reachability_mask(pattern)
        self._cache: dict[int, np.ndarray] = {}

    def driven_steps(self) -> np.ndarray:
        """Sorted indices of all steps that overlap a drive window."""
        out = []
        for a, b in self.windows:
            lo = max(0, math.floor(a / self.dt - 1e-9))
            hi = math.ceil(b / self.dt + 1e-9)
            out.extend(n for n in range(lo, hi) if self.is_driven(n))
        return np.array(sorted(set(out)), dtype=int)

    def is_driven(self, n: int) -> bool:
        t0, t1 = n * self.dt, (n + 1) * self.dt
        return any(t0 < b and t1 > a for a, b in self.windows)

    def __getitem__(self, n: int) -> np.ndarray:
        if not self.is_driven(n):
            return self.free
        m = self._cache.get(n)
        if m is None:
            m = magnus_step(self.generator, n * self.dt, self.dt, self.substeps, self.drive_mask)
            self._cache[n] = m
        return m


def lab_step_propagators(config: PhysicsConfig, substeps: int = 16) -> StepPropagators:
    l0, l1 = lab_generators(config)
    train = config.pulses

    def gen(t):
        return l0 + pulse_envelope(t, train) * l1

    windows = drive_windows(train) if train.area > 0 else []
    return StepPropagators(gen, l0, windows, config.grid.dt, substeps,
                           full_pattern=np.abs(l0) + np.abs(l1))
