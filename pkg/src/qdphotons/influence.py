"""Phonon bath correlation function, discretized influence coefficients and
polaron displacement functions.

All frequency integrals run over ``[0, omega_cut]`` with a composite
Gauss-Legendre rule; ``omega_cut`` is chosen such that J(omega_cut) is below
1e-12 of the spectral maximum, so the truncation is invisible in double
precision.
"""
from __future__ import annotations

import logging
import math
import os
import struct
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from .model import NumericalError, PhononBath, SimGrid, polaron_shift, spectral_density

log = logging.getLogger(__name__)

GL_ORDER = 16
ETA_CACHE_ENV = "QDPHOTONS_CACHE"
_ETA_MAGIC = b"QDETA"
_ETA_SCHEMA = 1


@lru_cache(maxsize=64)
def _gl_panels(omega_cut: float, panels: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(GL_ORDER)
    edges = np.linspace(0.0, omega_cut, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    nodes = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return nodes, weights


def _coth(x):
    return 1.0 / np.tanh(x)


def _panels_for(bath: PhononBath, t_extent: float) -> int:
    # about four panels per half oscillation of cos(omega t) at the cut-off
    osc = bath.omega_cutoff * abs(t_extent) / math.pi
    return int(max(48, math.ceil(4 * osc)))


class BathCorrelation:
    """Bath autocorrelation ``C(t) = int J(w) [coth(beta w/2) cos(wt) - i sin(wt)] dw``.

    Parameters
    ----------
    bath : PhononBath
    t_extent : float
        Largest |t| the quadrature grid is dimensioned for (ps).  Larger times
        are still evaluated, with a grid refined on the fly.
    """

    def __init__(self, bath: PhononBath, t_extent: float = 40.0):
        self.bath = bath
        self.t_extent = float(t_extent)
        self._set_grid(self.t_extent)

    def _set_grid(self, t_extent):
        nodes, weights = _gl_panels(self.bath.omega_cutoff, _panels_for(self.bath, t_extent))
        self.omega = nodes
        self.weights = weights * spectral_density(nodes, self.bath)
        self.coth = _coth(0.5 * self.bath.beta * nodes)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if t.size and np.max(np.abs(t)) > self.t_extent:
            self.t_extent = 2.0 * float(np.max(np.abs(t)))
            self._set_grid(self.t_extent)
        flat = t.ravel()
        out = np.empty(flat.shape, dtype=complex)
        chunk = max(1, 2 ** 22 // self.omega.size)
        for lo in range(0, flat.size, chunk):
            ph = np.multiply.outer(flat[lo:lo + chunk], self.omega)
            out[lo:lo + chunk] = (np.cos(ph) * self.coth - 1j * np.sin(ph)) @ self.weights
        out = out.reshape(t.shape)
        return out if out.ndim else complex(out)

    def memory_time(self, rel: float = 1e-3, t_max: float = 60.0, step: float = 0.05) -> float:
        """Smallest time after which |C(t)| stays below ``rel * |C(0)|``."""
        c0 = abs(self(0.0))
        if c0 == 0.0:
            return 0.0
        ts = np.arange(0.0, t_max + step, step)
        mags = np.abs(self(ts))
        above = np.nonzero(mags >= rel * c0)[0]
        if above[-1] == len(ts) - 1:
            raise NumericalError(f"bath correlation has not decayed within {t_max} ps")
        return float(ts[above[-1] + 1])


def bath_correlation(t, bath: PhononBath):
    """Evaluate the bath autocorrelation function C(t) (rad^2/ps^2)."""
    if bath.scale == 0:
        return np.zeros_like(np.asarray(t, dtype=complex)) if np.ndim(t) else 0j
    return BathCorrelation(bath, t_extent=max(40.0, float(np.max(np.abs(t))) if np.ndim(t) else abs(t)))(t)


@dataclass(frozen=True)
class EtaTable:
    """Discretized influence coefficients for a step ``dt`` and memory ``n_c``.

    ``eta_off[k-1]`` couples path variables ``k`` steps apart, ``k = 1..n_c``.
    """

    dt: float
    n_c: int
    eta_diag: complex
    eta_off: np.ndarray

    @property
    def is_zero(self) -> bool:
        return self.eta_diag == 0 and not np.any(self.eta_off)

    def as_array(self) -> np.ndarray:
        """``[eta_diag, eta_off[1], ..., eta_off[n_c]]``."""
        return np.concatenate([[self.eta_diag], self.eta_off]).astype(complex)


def compute_eta_table(grid: SimGrid, bath: PhononBath, n_c: int | None = None) -> EtaTable:
    """Influence coefficients from closed-form time integrals in frequency space.

    Using ``int int cos(w(s-s'))`` over the step cells analytically,

    * ``eta_off[k] = int J 4 sin^2(w dt/2)/w^2 [coth cos(w k dt) - i sin(w k dt)] dw``
    * ``eta_diag  = int J [coth (1 - cos(w dt)) - i (w dt - sin(w dt))] / w^2 dw``

    which equal the double integrals of C(s - s') over the respective cells.
    """
    n_c = grid.n_c if n_c is None else int(n_c)
    dt = grid.dt
    if bath.scale == 0:
        return EtaTable(dt, n_c, 0j, np.zeros(n_c, dtype=complex))
    nodes, w = _gl_panels(bath.omega_cutoff, _panels_for(bath, (n_c + 2) * dt))
    jw = spectral_density(nodes, bath) * w / nodes ** 2
    coth = _coth(0.5 * bath.beta * nodes)
    wdt = nodes * dt
    diag = np.sum(jw * (coth * (1.0 - np.cos(wdt)) - 1j * (wdt - np.sin(wdt))))
    k = np.arange(1, n_c + 1)
    ph = np.multiply.outer(k * dt, nodes)
    cell = 4.0 * np.sin(0.5 * wdt) ** 2 * jw
    off = (np.cos(ph) * coth - 1j * np.sin(ph)) @ cell
    if not (np.isfinite(diag) and np.all(np.isfinite(off))):
        raise NumericalError("non-finite influence coefficient")
    if n_c and abs(off[-1]) > 0.01 * abs(diag):
        log.warning("memory window %.2f ps is short: |eta[n_c]|/|eta_diag| = %.3g",
                    n_c * dt, abs(off[-1]) / abs(diag))
    return EtaTable(dt, n_c, complex(diag), off.astype(complex))


def memory_tail(table: EtaTable, bath: PhononBath) -> complex:
    """Sum of the influence coefficients beyond the memory window, ``sum_{k > n_c} eta_k``.

    For a super-ohmic bath ``int_0^inf C(t) dt = -i Omega_p`` (the real part,
    ``pi J(w)/(beta w)`` at ``w -> 0``, vanishes), hence
    ``eta_diag + sum_{k >= 1} eta_k = -i Omega_p dt`` and the tail follows
    from the kept coefficients without any further quadrature.
    """
    if bath.scale == 0:
        return 0j
    total = -1j * polaron_shift(bath) * table.dt
    return complex(total - table.eta_diag - np.sum(table.eta_off))


#: |t| beyond which phi(t) is set to zero (checked to have decayed below 1e-10 phi(0))
PHI_SPAN = 100.0  # ps


def polaron_displacement_functions(t, bath: PhononBath):
    """Return ``(phi(t), B)`` with ``phi(t) = int J/w^2 [coth cos(wt) - i sin(wt)] dw``
    and the Franck-Condon factor ``B = exp(-phi(0)/2)``.

    ``phi`` decays on the thermal and acoustic transit times (a few ps); it is
    evaluated for ``|t| <= PHI_SPAN`` and set to zero beyond.
    """
    t = np.asarray(t, dtype=float)
    if bath.scale == 0:
        return np.zeros(t.shape, dtype=complex), 1.0
    flat = t.ravel()
    inside = np.abs(flat) <= PHI_SPAN
    extent = float(np.max(np.abs(flat[inside]))) if np.any(inside) else 0.0
    if np.any(~inside):
        extent = PHI_SPAN
    nodes, w = _gl_panels(bath.omega_cutoff, _panels_for(bath, extent))
    jw = spectral_density(nodes, bath) * w / nodes ** 2
    coth = _coth(0.5 * bath.beta * nodes)
    phi0 = float(np.sum(jw * coth))

    def evaluate(ts):
        out = np.empty(ts.shape, dtype=complex)
        chunk = max(1, 2 ** 22 // nodes.size)
        for lo in range(0, ts.size, chunk):
            ph = np.multiply.outer(ts[lo:lo + chunk], nodes)
            out[lo:lo + chunk] = (np.cos(ph) * coth - 1j * np.sin(ph)) @ jw
        return out

    phi = np.zeros(flat.shape, dtype=complex)
    phi[inside] = evaluate(flat[inside])
    if np.any(~inside):
        edge = abs(evaluate(np.array([PHI_SPAN]))[0])
        if edge > 1e-10 * phi0:
            raise NumericalError(f"phi(t) has not decayed within {PHI_SPAN} ps (|phi| = {edge:.3g})")
    return phi.reshape(t.shape), math.exp(-0.5 * phi0)


# --- on-disk cache ------------------------------------------------------------
# Layout (little endian):
#   5s magic "QDETA" | u2 schema | u2 reserved | d dt | i4 n_c |
#   6d (scale, T, a, D_e, D_h, rho) | d v_s | u4 entry count |
#   entry count x (d real, d imag)   -- eta_diag first, then eta_off[1..n_c]
_HEADER = struct.Struct("<5sHHdi7dI")


def save_eta_table(path: str | Path, table: EtaTable, bath: PhononBath) -> None:
    arr = table.as_array()
    head = _HEADER.pack(_ETA_MAGIC, _ETA_SCHEMA, 0, table.dt, table.n_c,
                        bath.scale, bath.temperature, bath.dot_radius, bath.d_electron,
                        bath.d_hole, bath.mass_density, bath.sound_velocity, arr.size)
    Path(path).write_bytes(head + arr.astype("<c16").tobytes())


def load_eta_table(path: str | Path, grid: SimGrid | None = None,
                   bath: PhononBath | None = None) -> EtaTable:
    raw = Path(path).read_bytes()
    fields = _HEADER.unpack_from(raw)
    magic, schema, _, dt, n_c = fields[:5]
    key, count = fields[5:12], fields[12]
    if magic != _ETA_MAGIC or schema != _ETA_SCHEMA:
        raise ValueError(f"{path}: not an eta table of schema {_ETA_SCHEMA}")
    if grid is not None and (dt != grid.dt or n_c != grid.n_c):
        raise ValueError(f"{path}: grid mismatch")
    if bath is not None and key != (bath.scale, bath.temperature, bath.dot_radius, bath.d_electron,
                                    bath.d_hole, bath.mass_density, bath.sound_velocity):
        raise ValueError(f"{path}: bath mismatch")
    arr = np.frombuffer(raw, dtype="<c16", count=count, offset=_HEADER.size).astype(complex)
    return EtaTable(dt, n_c, complex(arr[0]), arr[1:].copy())


def cached_eta_table(grid: SimGrid, bath: PhononBath, n_c: int | None = None) -> EtaTable:
    """Compute an eta table, reusing the on-disk cache if ``$QDPHOTONS_CACHE`` is set."""
    n_c = grid.n_c if n_c is None else n_c
    root = os.environ.get(ETA_CACHE_ENV)
    if not root:
        return compute_eta_table(grid, bath, n_c)
    key = (grid.dt, n_c, bath.scale, bath.temperature) + bath.material_key()
    name = "eta_" + "_".join(f"{v:.10g}" for v in key) + ".bin"
    path = Path(root) / name
    if path.exists():
        try:
            return load_eta_table(path)
        except (ValueError, struct.error):
            log.warning("ignoring corrupt eta cache file %s", path)
    table = compute_eta_table(grid, bath, n_c)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(f".tmp{os.getpid()}")
    save_eta_table(tmp, table, bath)
    os.replace(tmp, path)
    return table
