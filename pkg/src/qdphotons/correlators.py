"""Two-time photon correlation functions in exact, QRT and polaron (PME) modes.

``G1(t, tau) = <sigma^dag(t+tau) sigma(t)>`` and
``G2(t, tau) = <sigma^dag(t) sigma^dag(t+tau) sigma(t+tau) sigma(t)>`` are built
by inserting ``sigma`` (left) respectively ``sigma . sigma^dag`` (sandwich) at
time ``t`` and continuing in ``tau``:

* exact — the ADM keeps its memory across the insertion,
* qrt   — the memory is traced out and the bath restarts in equilibrium,
* pme   — QRT applied to the polaron master equation; G1 picks up the
  lab-frame factor ``B^2 exp(phi(tau))``.

The time-averaged curves used for purity and indistinguishability are
evaluated with :func:`averaged_correlators`, which exploits that between
pulses the ADM lives in a small subspace: all insertion times share a few
response functions, and the sum over insertion times becomes prefix sums and
FFT cross-correlations.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .influence import polaron_displacement_functions
from .liouville import COHERENCE, OCCUPATION
from .model import ConfigError, PhysicsConfig
from .pathint import (G1_INSERT, G2_INSERT, MODES, Hybrid, PathEngine, State,
                      Trajectory, build_engine, ground_state, report_violations)

log = logging.getLogger(__name__)

KINDS = ("G1", "G2", "G2HOM")
_INSERT = {"G1": G1_INSERT, "G2": G2_INSERT}
_READ = {"G1": COHERENCE, "G2": OCCUPATION}


@dataclass
class CorrelationGrid:
    """Samples ``values[i, j] = G(t_i, tau_j)``."""

    t: np.ndarray
    tau: np.ndarray
    values: np.ndarray
    mode: str
    kind: str
    weights: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.values.shape != (self.t.size, self.tau.size):
            raise ValueError(f"values shape {self.values.shape} does not match nodes "
                             f"({self.t.size}, {self.tau.size})")

    def to_csv(self, path: str | Path, config: PhysicsConfig | None = None) -> None:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t_ps", "tau_ps", "re", "im", "mode", "kind"])
            for i, t in enumerate(self.t):
                for j, tau in enumerate(self.tau):
                    v = self.values[i, j]
                    w.writerow([f"{t:.6f}", f"{tau:.6f}", repr(float(v.real)), repr(float(v.imag)),
                                self.mode, self.kind])
        meta = dict(self.meta, code_version=__version__, n_t=int(self.t.size), n_tau=int(self.tau.size))
        if config is not None:
            meta["config_hash"] = config.digest()
            meta["config"] = config.to_dict()
        path.with_suffix(".meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True))


# --- time windows -----------------------------------------------------------------

@dataclass(frozen=True)
class AveragingWindow:
    """Insertion-time window and strided nodes on the step grid."""

    start: int  # step index
    stop: int
    stride: int
    tau_steps: int
    dt: float

    @property
    def nodes(self) -> np.ndarray:
        return np.arange(self.start, self.stop + 1, self.stride)

    @property
    def weights(self) -> np.ndarray:
        """Trapezoidal weights normalized by the window length."""
        w = np.full(self.nodes.size, float(self.stride))
        w[0] = w[-1] = 0.5 * self.stride
        return w / (self.stop - self.start)

    @property
    def horizon(self) -> int:
        return self.stop + self.tau_steps


def _to_steps(t: float, dt: float) -> int:
    n = round(t / dt)
    if abs(n * dt - t) > 1e-9 * max(1.0, abs(t)):
        raise ConfigError(f"time {t} ps is not on the dt={dt} ps grid")
    return int(n)


def steady_window(config: PhysicsConfig, stride: int | None = None) -> AveragingWindow:
    """One pulse period centred on the second pulse of the train."""
    p, g = config.pulses, config.grid
    if p.pulse_count < 2:
        raise ConfigError("time averaging needs a train of at least 2 pulses")
    stride = g.t_subsample_stride if stride is None else stride
    c2 = p.centers[1]
    start = _to_steps(c2 - 0.5 * p.period, g.dt)
    stop = _to_steps(c2 + 0.5 * p.period, g.dt)
    if (stop - start) % stride:
        raise ConfigError(f"window of {stop - start} steps is not divisible by stride {stride}")
    tau_steps = _to_steps(g.tau_span * p.period, g.dt)
    return AveragingWindow(start, stop, stride, tau_steps, g.dt)


# --- brute-force grids ----------------------------------------------------------------

def _baseline(engine: PathEngine, horizon: int, captures=(), check=True):
    hyb = Hybrid(engine, np.eye(4), 1, check_invariants=check)
    out, snaps = hyb.run(State("seed", ground_state()[None], 0), horizon, captures)
    return out[:, 0, :], snaps, hyb.violations


def _start_state(mode: str, engine: PathEngine, step: int, rho: np.ndarray, snap, insert):
    if mode == "exact":
        kind, data = snap
        dense = engine.from_compact(data) if kind == "compact" else data
        return State("dense", dense.copy(), step, insert, step)
    return State("seed", rho[None].copy(), step, insert, step)


def correlation_grid(kind: str, mode: str, config: PhysicsConfig, t_steps=None, tau_steps: int | None = None,
                     engine: PathEngine | None = None) -> CorrelationGrid:
    """G1 or G2 on insertion steps ``t_steps`` and delays ``0..tau_steps`` (one propagation per node)."""
    if kind not in _INSERT:
        raise ValueError(f"kind must be G1 or G2, got {kind!r}")
    engine = engine or build_engine(config, mode)
    win = steady_window(config) if (t_steps is None or tau_steps is None) else None
    t_steps = win.nodes if t_steps is None else np.asarray(t_steps, dtype=int)
    tau_steps = win.tau_steps if tau_steps is None else int(tau_steps)
    horizon = int(t_steps.max()) + tau_steps
    rho, snaps, viol = _baseline(engine, horizon, captures=t_steps if mode == "exact" else ())
    hyb = Hybrid(engine, _READ[kind], tau_steps + 1)
    vals = np.empty((t_steps.size, tau_steps + 1), dtype=complex)
    for i, n in enumerate(t_steps):
        st = _start_state(mode, engine, int(n), rho[n], snaps.get(int(n)), _INSERT[kind])
        out, _ = hyb.run(st, int(n) + tau_steps)
        vals[i] = out[:, 0, 0]
    dt = config.grid.dt
    tau = dt * np.arange(tau_steps + 1)
    if mode == "pme" and kind == "G1":
        vals = vals * pme_g1_factor(config, tau)[None, :]
    if kind == "G2":
        vals = _clip_g2(vals)
    return CorrelationGrid(dt * t_steps, tau, vals, mode, kind,
                           meta={"invariant_violations": viol, "occupation": rho[:, 3].real})


def g1_grid(mode: str, config: PhysicsConfig, t_steps=None, tau_steps=None, engine=None) -> CorrelationGrid:
    return correlation_grid("G1", mode, config, t_steps, tau_steps, engine)


def g2_grid(mode: str, config: PhysicsConfig, t_steps=None, tau_steps=None, engine=None) -> CorrelationGrid:
    return correlation_grid("G2", mode, config, t_steps, tau_steps, engine)


def _clip_g2(vals: np.ndarray) -> np.ndarray:
    re = vals.real
    worst = float(re.min()) if re.size else 0.0
    if worst < -1e-8:
        log.warning("G2 has negative values down to %.3g; clipping", worst)
    return np.clip(re, 0.0, None).astype(complex) if worst < 0 else re.astype(complex)


def g2_hom_grid(g1: CorrelationGrid, g2: CorrelationGrid, occupation: np.ndarray) -> CorrelationGrid:
    """``G2HOM = [n(t) n(t+tau) - |G1(t,tau)|^2 + G2(t,tau)] / 2``.

    ``occupation`` is sampled on the step grid starting at t = 0.
    """
    if g1.values.shape != g2.values.shape or not (np.array_equal(g1.t, g2.t) and np.array_equal(g1.tau, g2.tau)):
        raise ValueError("G1 and G2 grids do not share nodes")
    dt = g1.tau[1] - g1.tau[0] if g1.tau.size > 1 else 1.0
    ti = np.rint(g1.t / dt).astype(int)
    ji = np.rint(g1.tau / dt).astype(int)
    occ = np.asarray(occupation, dtype=float)
    nn = occ[ti][:, None] * occ[ti[:, None] + ji[None, :]]
    vals = 0.5 * (nn - np.abs(g1.values) ** 2 + g2.values.real)
    return CorrelationGrid(g1.t, g1.tau, vals.astype(complex), g1.mode, "G2HOM", g1.weights)


def time_average(grid: CorrelationGrid, weights: np.ndarray | None = None) -> np.ndarray:
    """Weighted t-average; default weights are trapezoidal over the grid's t-range."""
    if grid.t.size == 0:
        raise ValueError("empty averaging window")
    if weights is None:
        weights = grid.weights
    if weights is None:
        if grid.t.size == 1:
            weights = np.ones(1)
        else:
            dtn = np.diff(grid.t)
            weights = np.zeros(grid.t.size)
            weights[:-1] += 0.5 * dtn
            weights[1:] += 0.5 * dtn
            weights /= grid.t[-1] - grid.t[0]
    return np.asarray(weights) @ grid.values


def pme_g1_factor(config: PhysicsConfig, tau: np.ndarray) -> np.ndarray:
    """Lab-frame phonon factor of the polaron-frame coherence correlation."""
    phi, b = polaron_displacement_functions(tau, config.bath)
    return b * b * np.exp(phi)


# --- fast averaged correlators -------------------------------------------------------

@dataclass
class AveragedCorrelators:
    """t-averaged correlation curves on ``tau = dt * (0..tau_steps)``."""

    mode: str
    tau: np.ndarray
    g1: np.ndarray  # <G1>_t, complex
    g1_sq: np.ndarray  # <|G1|^2>_t
    g2: np.ndarray  # <G2>_t
    nn: np.ndarray  # <n(t) n(t+tau)>_t
    trajectory: Trajectory
    window: AveragingWindow
    meta: dict = field(default_factory=dict)

    @property
    def g2_hom(self) -> np.ndarray:
        return 0.5 * (self.nn - self.g1_sq + self.g2)


def _corr_fft(f: np.ndarray, y: np.ndarray, lag0: int, n_tau: int) -> np.ndarray:
    """``out[tau] = sum_t y[..., t] f[..., t + tau - lag0]`` summed over leading axes.

    ``f`` and ``y`` have shape ``(k, L)``; ``f`` index 0 is absolute step ``S``,
    ``y`` index 0 is absolute step ``t0`` and ``lag0 = S - t0``.
    """
    lf, ly = f.shape[-1], y.shape[-1]
    n = 1 << int(math.ceil(math.log2(lf + ly)))
    spec = np.fft.fft(f, n) * np.fft.fft(y[..., ::-1], n)
    conv = np.fft.ifft(spec.sum(axis=0))
    out = np.zeros(n_tau, dtype=complex)
    tau = np.arange(n_tau)
    idx = tau - lag0 + ly - 1
    ok = (idx >= 0) & (idx < lf + ly - 1)
    out[ok] = conv[idx[ok]]
    return out


class _Accumulator:
    def __init__(self, n_tau: int, second: bool):
        self.lin = np.zeros(n_tau, dtype=complex)
        self.sq = np.zeros(n_tau) if second else None

    def add_series(self, series: np.ndarray, w: float, offset: int = 0):
        n = series.size
        self.lin[offset:offset + n] += w * series
        if self.sq is not None:
            self.sq[offset:offset + n] += w * np.abs(series) ** 2


def _averaged_kind(kind: str, mode: str, engine: PathEngine, win: AveragingWindow, rho: np.ndarray,
                   snaps: dict, bulk: np.ndarray, special: np.ndarray, weights: dict, timeline) -> tuple:
    s = engine.slots
    n_tau = win.tau_steps + 1
    second = kind == "G1"
    acc = _Accumulator(n_tau, second)
    ins, read = _INSERT[kind], _READ[kind]
    hyb = Hybrid(engine, read, n_tau)

    # insertion times close to a pulse: one propagation each
    for n in special:
        st = _start_state(mode, engine, int(n), rho[n], snaps.get(int(n)), ins)
        out, _ = hyb.run(st, int(n) + win.tau_steps)
        acc.add_series(out[:, 0, 0], weights[int(n)])
    if bulk.size == 0:
        return acc.lin, acc.sq

    # shared transfer over the first s steps after an insertion
    ref = int(bulk[0])
    if mode == "exact":
        ys = np.concatenate([snaps[int(n)][1] if snaps[int(n)][0] == "compact"
                             else engine.to_compact(snaps[int(n)][1]) for n in bulk])
        basis = State("lifted", np.eye(engine.dim, dtype=complex), ref, ins, ref)
    else:
        ys = rho[bulk]
        basis = State("seed", np.eye(4, dtype=complex), ref, ins, ref)
    out, caps = _run_capture_end(hyb, basis, ref + s)
    r_short = out[:s, :, 0]  # (s, d_in)
    transfer = engine.to_compact(caps)  # (d_in, d): row j is the image of input basis j
    w = np.array([weights[int(n)] for n in bulk])
    short = ys @ r_short.T  # (N, s)
    acc.lin[:s] += w @ short
    if second:
        acc.sq[:s] += w @ np.abs(short) ** 2
    z = ys @ transfer  # (N, d) compact coordinates at u = t + s

    rk = hyb.rk[:, 0, :] if hyb.rk.shape[0] >= n_tau else engine.readout_table(read, n_tau)[:, 0, :]
    nxt = np.array([timeline.next_driven(int(n)) if timeline.next_driven(int(n)) is not None else -1
                    for n in bulk])
    for S in np.unique(nxt):
        sel = nxt == S
        tn, zn, wn = bulk[sel], z[sel], w[sel]
        # phase B: u <= s' < S through the compact read-out table
        taus = np.arange(s, n_tau)
        if S < 0:
            count = np.full(taus.size, tn.size)
        else:
            count = np.searchsorted(tn, S - taus, side="left")
        zc = np.vstack([np.zeros((1, zn.shape[1]), complex), np.cumsum(wn[:, None] * zn, axis=0)])
        rkt = rk[taus - s]
        acc.lin[s:] += np.einsum("jd,jd->j", rkt, zc[count])
        if second:
            outer = wn[:, None, None] * zn[:, :, None] * zn[:, None, :].conj()
            z2 = np.concatenate([np.zeros((1,) + outer.shape[1:], complex), np.cumsum(outer, axis=0)])
            for lo in range(0, taus.size, 4096):
                sl = slice(lo, lo + 4096)
                acc.sq[s + lo:s + lo + rkt[sl].shape[0]] += np.einsum(
                    "jd,jde,je->j", rkt[sl], z2[count[sl]], rkt[sl].conj()).real
        if S < 0:
            continue
        # phase C: s' >= S through shared responses of the compact basis
        yS = _advance(engine.K, zn, S - (tn + s))  # (N, d)
        resp_state = State("lifted", np.eye(engine.dim, dtype=complex), int(S), None)
        horizon = int(tn.max()) + win.tau_steps
        fr, _ = hyb.run(resp_state, horizon)
        f = fr[:, :, 0].T  # (d, L) responses for s' = S .. horizon
        t0 = int(tn.min())
        ly = int(tn.max()) - t0 + 1
        yseq = np.zeros((engine.dim, ly), dtype=complex)
        yseq[:, tn - t0] = (wn[:, None] * yS).T
        acc.lin += _corr_fft(f, yseq, int(S) - t0, n_tau)
        if second:
            d = engine.dim
            iu, ju = np.triu_indices(d)
            ff = f[iu] * f[ju].conj()
            yy = np.zeros((iu.size, ly), dtype=complex)
            yy[:, tn - t0] = (wn[:, None] * yS[:, iu] * yS[:, ju].conj()).T
            # terms with m != m' appear twice as complex conjugates
            mult = np.where(iu == ju, 1.0, 2.0)[:, None]
            diag_part = _corr_fft(ff * mult, yy, int(S) - t0, n_tau)
            acc.sq += diag_part.real
    return acc.lin, acc.sq


def _run_capture_end(hyb: Hybrid, st: State, stop: int):
    """Propagate to ``stop`` and return (readouts, dense state at ``stop``)."""
    out, snaps = hyb.run(st, stop, captures=[stop])
    kind, data = snaps[stop]
    return out, (hyb.engine.from_compact(data) if kind == "compact" else data)


def _advance(kmat: np.ndarray, z: np.ndarray, powers: np.ndarray) -> np.ndarray:
    """Rows ``K^{powers[i]} z[i]``."""
    order = np.argsort(powers)
    out = np.empty_like(z)
    cur_p = 0
    cur = np.eye(kmat.shape[0], dtype=complex)
    for i in order:
        p = int(powers[i])
        if p > cur_p:
            cur = np.linalg.matrix_power(kmat, p - cur_p) @ cur
            cur_p = p
        out[i] = cur @ z[i]
    return out


def _classify(engine: PathEngine, timeline, nodes: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Split insertion steps into bulk (free surroundings) and special (near a pulse)."""
    s = engine.slots
    driven = timeline.driven
    bulk, special = [], []
    for n in nodes:
        lo, hi = n - s + 1, n + s - 1
        i = np.searchsorted(driven, lo)
        near = i < driven.size and driven[i] <= hi
        (special if near else bulk).append(int(n))
    return np.array(bulk, dtype=int), np.array(special, dtype=int)


def averaged_correlators(config: PhysicsConfig, mode: str = "exact", engine: PathEngine | None = None,
                         stride: int | None = None, check_invariants: bool = True) -> AveragedCorrelators:
    """t-averaged G1, |G1|^2, G2 and n n over one steady pulse period."""
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    engine = engine or build_engine(config, mode)
    win = steady_window(config, stride)
    nodes = win.nodes
    wts = dict(zip(nodes.tolist(), win.weights.tolist()))
    hyb_probe = Hybrid(engine, OCCUPATION, 1)
    timeline = hyb_probe.timeline
    bulk, special = _classify(engine, timeline, nodes)
    caps = nodes if mode == "exact" else ()
    rho, snaps, viol = _baseline(engine, win.horizon, captures=caps, check=check_invariants)
    report_violations(viol, mode)
    n_tau = win.tau_steps + 1
    g1, g1_sq = _averaged_kind("G1", mode, engine, win, rho, snaps, bulk, special, wts, timeline)
    g2, _ = _averaged_kind("G2", mode, engine, win, rho, snaps, bulk, special, wts, timeline)
    occ = rho[:, 3].real
    wseq = np.zeros(nodes[-1] - nodes[0] + 1)
    wseq[nodes - nodes[0]] = win.weights * occ[nodes]
    nn = _corr_fft(occ[nodes[0]:][None, :].astype(complex), wseq[None, :].astype(complex), 0, n_tau).real
    tau = win.dt * np.arange(n_tau)
    if mode == "pme":
        fac = pme_g1_factor(config, tau)
        g1 = g1 * fac
        g1_sq = g1_sq * np.abs(fac) ** 2
    traj = Trajectory(win.dt, rho, viol)
    meta = {"bulk_nodes": int(bulk.size), "special_nodes": int(special.size), "slots": engine.slots,
            "compact_dim": engine.dim, "invariant_violations": viol}
    if g2.real.min() < -1e-8:
        log.warning("averaged G2 negative down to %.3g", g2.real.min())
    return AveragedCorrelators(mode, tau, g1, g1_sq, g2.real, nn, traj, win, meta)


# --- spectrum --------------------------------------------------------------------

def emission_spectrum(g1_tau: np.ndarray, dt: float, tau: np.ndarray | None = None, pad: int = 4):
    """Emission spectrum from a tau-averaged G1 on a uniform grid starting at tau = 0.

    ``S(w) = 2 Re sum_tau h(tau) G1(tau) exp(-i w tau) dt`` with a Hann window
    ``h`` falling to zero at the largest delay (the tau = 0 sample is half
    weighted).  Frequencies are relative to the rotating frame, i.e. to the
    polaron-shifted transition; positive ``w`` means higher photon energy.

    Returns
    -------
    omega, spectrum : ndarray
    """
    g = np.asarray(g1_tau, dtype=complex)
    if tau is not None:
        steps = np.diff(np.asarray(tau, dtype=float))
        if steps.size and np.max(np.abs(steps - dt)) > 1e-9 * dt:
            raise ValueError("emission_spectrum needs a uniform tau grid")
    n = g.size
    hann = 0.5 * (1.0 + np.cos(np.pi * np.arange(n) / (n - 1)))
    seq = g * hann * dt
    seq[0] *= 0.5
    m = 1 << int(math.ceil(math.log2(pad * n)))
    # sum_tau seq e^{-i w tau}: numpy's forward FFT uses e^{-2 pi i k n / m}
    spec = 2.0 * np.fft.fft(seq, m).real
    omega = 2.0 * np.pi * np.fft.fftfreq(m, d=dt)
    order = np.argsort(omega)
    return omega[order], spec[order]


def sideband_asymmetry(omega: np.ndarray, spectrum: np.ndarray, band=(0.3, 4.0)) -> float:
    """``(W+ - W-)/(W+ + W-)`` with ``W+-`` the spectral weight in ``band`` above/below the line."""
    lo, hi = band
    up = (omega >= lo) & (omega <= hi)
    dn = (omega <= -lo) & (omega >= -hi)
    wp, wm = spectrum[up].sum(), spectrum[dn].sum()
    return float((wp - wm) / (wp + wm))
