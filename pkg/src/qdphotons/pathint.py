"""Iterative path-integral propagation of the augmented density matrix (ADM).

The ADM at step ``m`` is a tensor ``A[a_1, ..., a_s]`` over the Liouville
indices of the last ``s = max(n_c, 1)`` time slices, newest first, flattened
with ``a_1`` as the most significant base-4 digit.  One step multiplies by the
system propagator ``M[new, a_1]`` and by the influence factors
``I_k[new, a_k] = exp(-(s+_new - s-_new) (eta_k s+_k - conj(eta_k) s-_k))``
and sums out the oldest slice.

Operator insertions are kept *pending*: the newest slice keeps its
pre-insertion label (it describes the system on the interval that ended at the
insertion time) while the superoperator is folded into the next system
propagator and into read-outs.

Outside drive windows the ADM collapses onto a small set of path patterns
(``GX...GX``, ``XG...XG`` and ``GG..GG XX..XX``), so long drive-free stretches are
propagated with a ``(s+3) x (s+3)`` matrix instead of the full tensor.
"""
from __future__ import annotations

import logging
import struct
import tempfile
import uuid
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .influence import EtaTable, cached_eta_table, memory_tail
from .liouville import (BRA, KET, OCCUPATION, SIGMA, SIGMA_DAG, StepPropagators, is_density_matrix,
                        lab_step_propagators, left, right)
from .model import PhysicsConfig

log = logging.getLogger(__name__)

MODES = ("exact", "qrt", "pme")


class ResourceError(MemoryError):
    """The requested memory window does not fit in the configured budget."""


class InvariantError(RuntimeError):
    """A reduced density matrix violated trace, Hermiticity or positivity."""


def pair_factor(eta: complex) -> np.ndarray:
    """``I[new, old]`` for a coefficient ``eta`` coupling two path points."""
    dn = (KET - BRA)[:, None]
    return np.exp(-dn * (eta * KET[None, :] - np.conj(eta) * BRA[None, :]))


def diagonal_factor(eta_diag: complex) -> np.ndarray:
    dn = KET - BRA
    return np.exp(-dn * (eta_diag * KET - np.conj(eta_diag) * BRA))


class PathEngine:
    """Step kernel for one set of system propagators and influence coefficients.

    Parameters
    ----------
    props : StepPropagators
        System propagators ``M_n``.
    eta : EtaTable or None
        Influence coefficients; ``None`` (or all zero) gives memoryless dynamics.
    memory_cap_bytes : int, optional
    tail : complex, optional
        Added to the coefficient of the oldest kept slice (to the diagonal one
        for ``n_c = 0``); see :func:`qdphotons.influence.memory_tail`.
    """

    def __init__(self, props: StepPropagators, eta: EtaTable | None,
                 memory_cap_bytes: int = 2 * 1024 ** 3, tail: complex = 0j):
        self.props = props
        if eta is not None and eta.is_zero:
            eta = None
        self.eta = eta
        self.tail = 0j
        n_c = 0 if eta is None else eta.n_c
        self.slots = max(n_c, 1)
        need = 16 * 4 ** self.slots
        if need > memory_cap_bytes:
            raise ResourceError(f"ADM with n_c={n_c} needs {need} bytes per tensor "
                                f"(cap {memory_cap_bytes} bytes)")
        self.cap = int(memory_cap_bytes)
        self.size = 4 ** self.slots
        self.rest = 4 ** (self.slots - 1)
        s = self.slots
        if eta is None:
            self.phi0 = np.ones(4, dtype=complex)
            pairs = [np.ones((4, 4), dtype=complex)] * s
        else:
            off = eta.eta_off.astype(complex)
            diag = eta.eta_diag
            if n_c:
                off = off.copy()
                off[-1] += tail
            else:
                diag += tail
            self.tail = complex(tail)
            self.phi0 = diagonal_factor(diag)
            pairs = [pair_factor(e) for e in off]
            if not pairs:  # n_c = 0 with a finite bath: self-interaction only
                pairs = [np.ones((4, 4), dtype=complex)]
        # InfShort[new, a_1..a_{s-1}] including the diagonal factor
        short = self.phi0.reshape(4, 1)
        for k in range(s - 1):
            short = (short[:, :, None] * pairs[k][:, None, :]).reshape(4, -1)
        self.inf_short = short
        self.inf_last = pairs[s - 1]
        self._fac_free = self._factor(props.free)
        self._build_compact()

    # --- dense kernel ----------------------------------------------------------
    def _factor(self, m: np.ndarray) -> np.ndarray:
        if self.slots == 1:
            return m * self.inf_last * self.phi0[:, None]
        r = 4 ** (self.slots - 2)
        return (m[:, :, None] * self.inf_short.reshape(4, 4, r)).reshape(4, self.rest)

    def step(self, adm: np.ndarray, n: int, pending: np.ndarray | None = None) -> np.ndarray:
        """Advance a batch of ADMs ``(b, 4**s)`` across step ``n``."""
        m = self.props[n]
        if pending is not None:
            m = m @ pending
            fac = self._factor(m)
        elif m is self.props.free:
            fac = self._fac_free
        else:
            fac = self._factor(m)
        b = adm.shape[0]
        if self.slots == 1:
            return adm @ fac.T
        tmp = adm.reshape(b, self.rest, 4) @ self.inf_last.T  # sum out the oldest slice
        return (fac[None, :, :] * tmp.transpose(0, 2, 1)).reshape(b, self.size)

    def seed_step(self, rho: np.ndarray, n: int, pending: np.ndarray | None = None) -> np.ndarray:
        """First step from a factorized system-bath state given by reduced vectors ``rho``."""
        m = self.props[n]
        if pending is not None:
            m = m @ pending
        new = (rho @ m.T) * self.phi0[None, :]
        out = np.zeros((rho.shape[0], self.size), dtype=complex)
        out[:, :: self.rest] = new  # older slices padded with GG (index 0)
        return out

    def seed(self, rho: np.ndarray) -> np.ndarray:
        """ADM of a factorized state: reduced state in the newest slice, GG behind."""
        rho = np.atleast_2d(rho)
        out = np.zeros((rho.shape[0], self.size), dtype=complex)
        out[:, :: self.rest] = rho
        return out

    def reduce(self, adm: np.ndarray, pending: np.ndarray | None = None) -> np.ndarray:
        rho = adm.reshape(adm.shape[0], 4, self.rest).sum(axis=2)
        return rho if pending is None else rho @ pending.T

    # --- compact free subspace -------------------------------------------------
    def _build_compact(self):
        mask = self.props.free_mask  # mask[new, old]
        chains = [[a] for a in range(4)]
        for _ in range(self.slots - 1):
            chains = [c + [b] for c in chains for b in range(4) if mask[c[-1], b]]
        self.compact_chains = [tuple(c) for c in chains]
        self.compact_index = np.array(
            [sum(a * 4 ** (self.slots - 1 - k) for k, a in enumerate(c)) for c in chains], dtype=np.int64)
        d = len(chains)
        self.dim = d
        lookup = {c: j for j, c in enumerate(self.compact_chains)}
        kmat = np.zeros((d, d), dtype=complex)
        m = self.props.free
        for j, old in enumerate(self.compact_chains):
            for new in range(4):
                if not mask[new, old[0]]:
                    continue
                tgt = (new,) + old[:-1]
                jj = lookup.get(tgt)
                if jj is None:
                    continue
                rest_idx = 0
                for a in old[:-1]:
                    rest_idx = 4 * rest_idx + a
                val = m[new, old[0]] * self.inf_last[new, old[-1]]
                val *= self.inf_short[new, rest_idx] if self.slots > 1 else self.phi0[new]
                kmat[jj, j] += val
        self.K = kmat
        # reduced state from compact coordinates
        self.compact_reduce = np.zeros((4, d))
        for j, c in enumerate(self.compact_chains):
            self.compact_reduce[c[0], j] = 1.0

    def to_compact(self, adm: np.ndarray, tol: float = 1e-10) -> np.ndarray:
        y = np.array(adm[:, self.compact_index])
        for row in adm:  # row by row: adm may be a large memory map
            rest = np.array(row)
            scale = max(1.0, float(np.max(np.abs(rest))))
            rest[self.compact_index] = 0
            leak = float(np.max(np.abs(rest)))
            if leak > tol * scale:
                raise RuntimeError(f"ADM not confined to the drive-free subspace (leak {leak:.3g})")
        return y

    def from_compact(self, y: np.ndarray) -> np.ndarray:
        y = np.atleast_2d(y)
        out = np.zeros((y.shape[0], self.size), dtype=complex)
        out[:, self.compact_index] = y
        return out

    def readout_table(self, readouts: np.ndarray, length: int) -> np.ndarray:
        """``RK[j] = R_c K^j`` for ``j < length``; shape ``(length, n_read, dim)``."""
        rc = np.atleast_2d(readouts) @ self.compact_reduce
        out = np.empty((length,) + rc.shape, dtype=complex)
        cur = rc.astype(complex)
        for j in range(length):
            out[j] = cur
            cur = cur @ self.K
        return out

    def compact_ready(self, last_event: int, m: int) -> bool:
        """Whether the state at step ``m`` lies in the compact subspace, given that
        the most recent non-free step (drive, insertion or seeding) was ``last_event``."""
        return m - last_event - 1 >= self.slots - 1


def build_engine(config: PhysicsConfig, mode: str = "exact") -> PathEngine:
    """Engine for ``mode`` in {'exact', 'qrt', 'pme'}."""
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; choose from {MODES}")
    cap = config.grid.memory_cap_bytes
    if mode == "pme":
        from .pme import pme_step_propagators
        return PathEngine(pme_step_propagators(config), None, cap)
    props = lab_step_propagators(config)
    if config.bath.scale == 0:
        return PathEngine(props, None, cap)
    eta = cached_eta_table(config.grid, config.bath)
    tail = memory_tail(eta, config.bath) if config.grid.memory_tail else 0j
    return PathEngine(props, eta, cap, tail=tail)


# --- hybrid propagation -------------------------------------------------------

@dataclass
class State:
    """Propagation state of a batch: ``kind`` in {'dense', 'compact', 'seed', 'lifted'}.

    'lifted' is a dense state given by its compact coordinates; it is expanded
    chunk by chunk when propagated.
    """

    kind: str
    data: np.ndarray
    step: int
    pending: np.ndarray | None = None
    last_event: int = -(10 ** 9)


class Timeline:
    """Drive-window structure of the step grid of an engine."""

    def __init__(self, engine: PathEngine):
        self.engine = engine
        self.driven = engine.props.driven_steps()

    def next_driven(self, m: int) -> int | None:
        i = np.searchsorted(self.driven, m)
        return int(self.driven[i]) if i < self.driven.size else None

    def last_driven_before(self, m: int) -> int | None:
        i = np.searchsorted(self.driven, m) - 1
        return int(self.driven[i]) if i >= 0 else None


class Hybrid:
    """Propagate batches with dense steps near drives and compact jumps elsewhere."""

    #: dense snapshots at least this large are kept in a temporary file
    spill_bytes = 64 * 1024 ** 2

    def __init__(self, engine: PathEngine, readouts: np.ndarray, max_len: int,
                 check_invariants: bool = False):
        self.engine = engine
        # a dense step holds about four batch-sized temporaries
        self.chunk = max(1, engine.cap // (6 * 16 * engine.size))
        self._spill = None
        self.timeline = Timeline(engine)
        self.readouts = np.atleast_2d(readouts).astype(complex)
        self.rk = engine.readout_table(self.readouts, max_len + 1)
        self.check = check_invariants
        self.violations = 0

    def _readout_dense(self, st: State) -> np.ndarray:
        if st.kind == "seed":
            rho = st.data if st.pending is None else st.data @ st.pending.T
        else:
            rho = self.engine.reduce(st.data, st.pending)
        if self.check:
            for r in rho:
                if not is_density_matrix(r):
                    self.violations += 1
        return rho @ self.readouts.T  # (b, n_read)

    def _kpow(self, y: np.ndarray, n: int) -> np.ndarray:
        return y @ np.linalg.matrix_power(self.engine.K, n).T

    def _keep(self, data: np.ndarray) -> np.ndarray:
        if data.nbytes < self.spill_bytes:
            return data.copy()
        if self._spill is None:
            self._spill = tempfile.TemporaryDirectory(prefix="qdphotons-")
        path = Path(self._spill.name) / f"snap{uuid.uuid4().hex}.npy"
        mm = np.lib.format.open_memmap(path, mode="w+", dtype=data.dtype, shape=data.shape)
        mm[...] = data
        mm.flush()
        return mm

    def run(self, st: State, stop: int, captures: Sequence[int] = ()) -> tuple[np.ndarray, dict]:
        """Readouts at steps ``st.step .. stop``; shape ``(stop - st.step + 1, b, n_read)``.

        ``captures`` lists steps at which the state is returned as
        ``(kind, data)``, with ``kind`` 'dense' or 'compact'.  Dense batches
        larger than the memory cap allows are processed in chunks; large dense
        snapshots are memory-mapped from a temporary file.
        """
        b = st.data.shape[0]
        if st.kind == "seed" or b <= self.chunk:
            if st.kind == "lifted":
                st = State("dense", self.engine.from_compact(st.data), st.step, st.pending, st.last_event)
            return self._run(st, stop, captures)
        outs, parts = [], []
        for lo in range(0, b, self.chunk):
            data = st.data[lo:lo + self.chunk]
            if st.kind == "lifted":
                data = self.engine.from_compact(data)
            sub = State("dense", data, st.step, st.pending, st.last_event)
            out, snaps = self._run(sub, stop, captures)
            outs.append(out)
            parts.append(snaps)
        return np.concatenate(outs, axis=1), {key: self._merge([p[key] for p in parts]) for key in parts[0]}

    def _merge(self, parts: list) -> tuple[str, np.ndarray]:
        if all(kind == "compact" for kind, _ in parts):
            return "compact", np.concatenate([d for _, d in parts])
        dense = [d if kind == "dense" else self.engine.from_compact(d) for kind, d in parts]
        rows = sum(d.shape[0] for d in dense)
        if rows * dense[0].shape[1] * 16 < self.spill_bytes:
            return "dense", np.concatenate(dense)
        if self._spill is None:
            self._spill = tempfile.TemporaryDirectory(prefix="qdphotons-")
        path = Path(self._spill.name) / f"snap{uuid.uuid4().hex}.npy"
        mm = np.lib.format.open_memmap(path, mode="w+", dtype=complex, shape=(rows, dense[0].shape[1]))
        lo = 0
        for d in dense:
            mm[lo:lo + d.shape[0]] = d
            lo += d.shape[0]
        mm.flush()
        return "dense", mm

    def _run(self, st: State, stop: int, captures: Sequence[int] = ()) -> tuple[np.ndarray, dict]:
        eng = self.engine
        start = st.step
        b = st.data.shape[0]
        out = np.empty((stop - start + 1, b, self.readouts.shape[0]), dtype=complex)
        caps = sorted(c for c in captures if start <= c <= stop)
        snaps: dict[int, tuple[str, np.ndarray]] = {}
        ci = 0
        m = start
        while m <= stop:
            if st.kind == "compact":
                nd = self.timeline.next_driven(m)
                end = stop + 1 if nd is None else min(nd, stop + 1)
                n = end - m
                if n > self.rk.shape[0]:
                    self.rk = eng.readout_table(self.readouts, n + 1)
                out[m - start:end - start] = np.einsum("jrd,bd->jbr", self.rk[:n], st.data)
                y, pos = st.data, m
                while ci < len(caps) and caps[ci] < end:
                    y = self._kpow(y, caps[ci] - pos)
                    pos = caps[ci]
                    snaps[caps[ci]] = ("compact", y.copy())
                    ci += 1
                if end > stop:
                    break
                y = self._kpow(y, end - pos)
                st = State("dense", eng.from_compact(y), end, None, st.last_event)
                m = end
                continue
            # dense or seed
            if (st.kind == "dense" and st.pending is None and m < stop and not eng.props.is_driven(m)
                    and eng.compact_ready(st.last_event, m)):
                st = State("compact", eng.to_compact(st.data), m, None, st.last_event)
                continue
            out[m - start] = self._readout_dense(st)
            if ci < len(caps) and caps[ci] == m:
                data = st.data if st.kind == "dense" else eng.seed(st.data)
                if st.pending is not None:
                    raise ValueError("cannot capture a state with a pending insertion")
                snaps[m] = ("dense", self._keep(data))
                ci += 1
            if m == stop:
                break
            event = st.kind == "seed" or st.pending is not None or eng.props.is_driven(m)
            if st.kind == "seed":
                data = eng.seed_step(st.data, m, st.pending)
            else:
                data = eng.step(st.data, m, st.pending)
            st = State("dense", data, m + 1, None, m if event else st.last_event)
            m += 1
        return out, snaps


# --- single-time propagation ---------------------------------------------------

@dataclass
class Trajectory:
    """Reduced density matrices on the step grid."""

    dt: float
    rho: np.ndarray  # (n_steps + 1, 4) Liouville vectors
    violations: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.rho.shape[0])

    @property
    def occupation(self) -> np.ndarray:
        return self.rho[:, 3].real

    @property
    def matrices(self) -> np.ndarray:
        return self.rho.reshape(-1, 2, 2)


def ground_state() -> np.ndarray:
    return np.array([1, 0, 0, 0], dtype=complex)


def report_violations(count: int, mode: str) -> None:
    """Raise on invariant violations; PME violations (a known artifact of the
    perturbative generator) are only logged."""
    if not count:
        return
    msg = f"{count} reduced density matrices violated invariants ({mode})"
    if mode == "pme":
        log.warning(msg)
    else:
        raise InvariantError(msg)


def propagate_single_time(config: PhysicsConfig, mode: str = "exact", t_max: float | None = None,
                          engine: PathEngine | None = None, check_invariants: bool = True,
                          rho0: np.ndarray | None = None) -> Trajectory:
    """Reduced density matrix from a factorized start (ground state by default) to ``t_max``."""
    engine = engine or build_engine(config, mode)
    if t_max is None:
        t_max = config.pulses.pulse_count * config.pulses.period + config.pulses.t0
    n = int(round(t_max / config.grid.dt))
    hyb = Hybrid(engine, np.eye(4), 1, check_invariants=check_invariants)
    st = State("seed", np.atleast_2d(ground_state() if rho0 is None else rho0), 0)
    out, _ = hyb.run(st, n)
    report_violations(hyb.violations, mode)
    return Trajectory(config.grid.dt, out[:, 0, :], hyb.violations)


# --- insertion and tau continuation -------------------------------------------

@dataclass
class ADM:
    """Single augmented density matrix with an optional pending insertion."""

    engine: PathEngine
    data: np.ndarray  # (4**s,)
    step: int
    pending: np.ndarray | None = None
    last_event: int = -(10 ** 9)

    def reduced(self) -> np.ndarray:
        return self.engine.reduce(self.data[None], self.pending)[0]


SIDES = ("left", "right")


def insert_superoperator(adm: ADM, side: str, operator: np.ndarray) -> ADM:
    """Multiply the state at the current time by ``operator`` from ``side``."""
    if side not in SIDES:
        raise ValueError(f"side must be one of {SIDES}")
    sup = left(operator) if side == "left" else right(operator)
    pend = sup if adm.pending is None else sup @ adm.pending
    return ADM(adm.engine, adm.data, adm.step, pend, adm.last_event)


def adm_at(config: PhysicsConfig, step: int, mode: str = "exact",
           engine: PathEngine | None = None) -> ADM:
    """Full ADM after ``step`` steps from the ground state."""
    engine = engine or build_engine(config, mode)
    a = engine.seed(ground_state())
    last = -(10 ** 9)
    for n in range(step):
        a = engine.seed_step(engine.reduce(a), n) if n == 0 else engine.step(a, n)
        if n == 0 or engine.props.is_driven(n):
            last = n
    return ADM(engine, a[0], step, None, last)


def continue_tau_exact(adm: ADM, tau_steps: int, readouts: np.ndarray | None = None) -> np.ndarray:
    """Continue with the full memory; returns reduced states (or readouts) for tau = 0..tau_steps."""
    readouts = np.eye(4) if readouts is None else readouts
    hyb = Hybrid(adm.engine, readouts, tau_steps + 1)
    st = State("dense", adm.data[None].copy(), adm.step, adm.pending, adm.last_event)
    out, _ = hyb.run(st, adm.step + tau_steps)
    return out[:, 0, :]


def continue_tau_qrt(adm: ADM, tau_steps: int, readouts: np.ndarray | None = None) -> np.ndarray:
    """Trace out the memory, restart from a factorized state, and continue."""
    readouts = np.eye(4) if readouts is None else readouts
    rho = adm.reduced()
    hyb = Hybrid(adm.engine, readouts, tau_steps + 1)
    out, _ = hyb.run(State("seed", rho[None], adm.step), adm.step + tau_steps)
    return out[:, 0, :]


def qrt_seed(adm: ADM) -> ADM:
    """ADM of the factorized state with the same reduced density matrix."""
    rho = adm.reduced()
    return ADM(adm.engine, adm.engine.seed(rho)[0], adm.step, None, adm.step)


# --- checkpoints --------------------------------------------------------------
# Layout (little endian): 6s magic "QDADM1" | u4 slots | i8 step | u1 has_pending |
#   [16 x complex128 pending] | 4**slots x complex128 tensor
_CK = struct.Struct("<6sIqB")


def save_checkpoint(path: str | Path, adm: ADM) -> None:
    head = _CK.pack(b"QDADM1", adm.engine.slots, adm.step, adm.pending is not None)
    body = b"" if adm.pending is None else adm.pending.astype("<c16").tobytes()
    Path(path).write_bytes(head + body + adm.data.astype("<c16").tobytes())


def load_checkpoint(path: str | Path, engine: PathEngine) -> ADM:
    raw = Path(path).read_bytes()
    magic, slots, step, has_p = _CK.unpack_from(raw)
    if magic != b"QDADM1" or slots != engine.slots:
        raise ValueError(f"{path}: incompatible checkpoint")
    off = _CK.size
    pending = None
    if has_p:
        pending = np.frombuffer(raw, "<c16", 16, off).reshape(4, 4).astype(complex)
        off += 16 * 16
    data = np.frombuffer(raw, "<c16", 4 ** slots, off).astype(complex)
    return ADM(engine, data, step, pending, step)


G1_INSERT = left(SIGMA)
G2_INSERT = np.kron(SIGMA, SIGMA_DAG.T)
