"""(T, lambda) sweeps, result files and the convergence harness.

Every (T, lambda, mode) task stores its outcome in ``<out>/points/<key>.json``
as soon as it finishes; the results table and heatmaps are regenerated from
those files, so an interrupted sweep resumes without recomputation and the
CSV bytes depend only on the configurations, never on worker scheduling.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .figures import compute_figures, qrt_error
from .influence import BathCorrelation
from .model import ConfigError, PhysicsConfig, apply_preset
from .nonmarkov import non_markovianity
from .pathint import MODES, ResourceError

log = logging.getLogger(__name__)

DESK_TEMPERATURES = (4.0, 10.0, 20.0, 30.0, 50.0, 70.0)
DESK_LAMBDAS = (0.0, 0.5, 1.0, 2.0, 5.0, 10.0)
RESULT_COLUMNS = ("T_K", "lambda", "mode", "P", "I", "B", "Q_P", "Q_I", "N", "dt", "n_c", "stride", "error")
HEATMAP_FIELDS = ("P", "I", "B", "Q_P", "Q_I", "N")


@dataclass
class SweepSpec:
    """Axes, modes and output location of a sweep.

    ``preset`` may be ``None`` to keep the grid of ``base``.
    """

    temperatures: Sequence[float] = DESK_TEMPERATURES
    lambdas: Sequence[float] = DESK_LAMBDAS
    modes: Sequence[str] = ("exact", "qrt")
    preset: str | None = "desk"
    out_dir: str | Path = "results"
    workers: int = 1
    base: PhysicsConfig = field(default_factory=PhysicsConfig)
    resume: bool = False
    with_n: bool = True

    def __post_init__(self):
        if not len(self.temperatures) or not len(self.lambdas):
            raise ConfigError("sweep axes must be non-empty")
        if not len(self.modes):
            raise ConfigError("at least one mode is required")
        bad = [m for m in self.modes if m not in MODES]
        if bad:
            raise ConfigError(f"unknown modes {bad}; choose from {MODES}")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    def point_config(self, temperature: float, scale: float) -> PhysicsConfig:
        cfg = self.base.replace(**{"bath.temperature": float(temperature), "bath.scale": float(scale)})
        return apply_preset(cfg, self.preset) if self.preset else cfg


def _fmt(v) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    if isinstance(v, float):
        return f"{v:.10g}"
    return str(v)


def _task_key(config: PhysicsConfig, what: str) -> str:
    return f"{what}-T{config.bath.temperature:g}-L{config.bath.scale:g}-{config.digest()}"


def _run_task(args) -> tuple[str, dict]:
    """Worker entry point: one mode at one point, or the measure N."""
    config, what = args
    try:
        if what == "N":
            return what, {"N": non_markovianity(config).value}
        fom, _ = compute_figures(config, what)
        out = fom.percent()
        out.update(dt=fom.dt, n_c=fom.n_c, stride=fom.stride)
        return what, out
    except Exception as exc:  # recorded per point, the sweep continues
        log.error("task %s at T=%g lambda=%g failed: %s", what, config.bath.temperature,
                  config.bath.scale, exc)
        return what, {"error": f"{type(exc).__name__}: {exc}"}


def _write_atomic(path: Path, text: str) -> None:
    tmp = path.with_name(f".{path.name}.{os.getpid()}.tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


@dataclass
class SweepResult:
    rows: list[dict]
    results_csv: Path
    heatmaps: dict[tuple[str, str], Path]
    computed: int
    failed: int

    @property
    def ok(self) -> bool:
        return self.failed == 0


def run_sweep(spec: SweepSpec) -> SweepResult:
    """Run all (T, lambda, mode) tasks and write ``results.csv`` plus heatmaps."""
    out = Path(spec.out_dir)
    points_dir = out / "points"
    points_dir.mkdir(parents=True, exist_ok=True)
    grid = [(float(t), float(lam)) for t in spec.temperatures for lam in spec.lambdas]
    whats = list(dict.fromkeys(spec.modes))
    if spec.with_n:
        whats.append("N")

    tasks, records = [], {}
    for t, lam in grid:
        cfg = spec.point_config(t, lam)
        for what in whats:
            key = _task_key(cfg, what)
            path = points_dir / f"{key}.json"
            if spec.resume and path.exists():
                rec = json.loads(path.read_text())
                if "error" not in rec:
                    records[(t, lam, what)] = rec
                    continue
            tasks.append(((cfg, what), (t, lam, what), path))

    def store(ident, path, result):
        _write_atomic(path, json.dumps(result, sort_keys=True))
        records[ident] = result

    if spec.workers == 1 or len(tasks) <= 1:
        for args, ident, path in tasks:
            store(ident, path, _run_task(args)[1])
    else:
        with ProcessPoolExecutor(max_workers=spec.workers) as pool:
            for (args, ident, path), (_, res) in zip(tasks, pool.map(_run_task, [a for a, _, _ in tasks])):
                store(ident, path, res)

    rows = _assemble_rows(grid, spec.modes, records, spec.with_n)
    results_csv = out / "results.csv"
    _write_atomic(results_csv, rows_to_csv(rows))
    heatmaps = write_heatmaps(rows, spec.temperatures, spec.lambdas, spec.modes, out)
    failed = sum(1 for r in rows if r.get("error"))
    return SweepResult(rows, results_csv, heatmaps, len(tasks), failed)


def _assemble_rows(grid, modes, records: dict, with_n: bool) -> list[dict]:
    rows = []
    for t, lam in grid:
        exact = records.get((t, lam, "exact"), {})
        nrec = records.get((t, lam, "N"), {}) if with_n else {}
        for mode in modes:
            rec = records.get((t, lam, mode), {})
            row = {"T_K": t, "lambda": lam, "mode": mode}
            for k in ("P", "I", "B", "dt", "n_c", "stride"):
                row[k] = rec.get(k)
            for fig in ("P", "I"):
                q = None
                if mode != "exact" and fig in exact and rec.get(fig) is not None:
                    q = qrt_error(exact[fig], rec[fig])
                elif mode == "exact" and fig in exact:
                    q = 0.0
                row[f"Q_{fig}"] = q
            row["N"] = nrec.get("N")
            errors = [e for e in (rec.get("error"), nrec.get("error")) if e]
            row["error"] = "; ".join(errors)
            rows.append(row)
    return rows


def rows_to_csv(rows: Iterable[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RESULT_COLUMNS)
    for r in rows:
        w.writerow([_fmt(r.get(c)) for c in RESULT_COLUMNS])
    return buf.getvalue()


def read_results(path: str | Path) -> list[dict]:
    """Parse a results CSV back into typed rows (empty cells become ``None``)."""
    rows = []
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            row = {}
            for k, v in r.items():
                if k in ("mode", "error"):
                    row[k] = v
                elif v == "":
                    row[k] = None
                elif k == "n_c" or k == "stride":
                    row[k] = int(v)
                else:
                    row[k] = float(v)
            rows.append(row)
    return rows


def write_heatmaps(rows: list[dict], temperatures, lambdas, modes, out: str | Path) -> dict:
    """One matrix CSV per (figure, mode): rows are temperatures, columns lambdas."""
    out = Path(out)
    index = {(r["T_K"], r["lambda"], r["mode"]): r for r in rows}
    paths = {}
    for mode in modes:
        for fig in HEATMAP_FIELDS:
            buf = io.StringIO()
            w = csv.writer(buf, lineterminator="\n")
            w.writerow(["T_K\\lambda"] + [_fmt(float(lam)) for lam in lambdas])
            for t in temperatures:
                vals = [index.get((float(t), float(lam), mode), {}).get(fig) for lam in lambdas]
                w.writerow([_fmt(float(t))] + [_fmt(v) for v in vals])
            path = out / f"heatmap_{fig}_{mode}.csv"
            _write_atomic(path, buf.getvalue())
            paths[(fig, mode)] = path
    return paths


# --- convergence harness --------------------------------------------------------

#: default refinement tolerances in percentage points
CONVERGENCE_TOLERANCES = {"P": 0.2, "I": 1.0, "B": 0.5}


@dataclass
class Rung:
    dt: float
    n_c: int
    stride: int
    figures: dict | None = None
    error: str = ""
    memory_ok: bool = True
    delta: dict | None = None
    converged: bool | None = None


@dataclass
class ConvergenceReport:
    temperature: float
    scale: float
    mode: str
    rungs: list[Rung]
    memory_time: float

    @property
    def converged(self) -> bool:
        return all(r.converged is not False for r in self.rungs) and not any(r.error for r in self.rungs)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["dt", "n_c", "stride", "P", "I", "B", "dP", "dI", "dB", "memory_ok", "converged", "error"])
        for r in self.rungs:
            f = r.figures or {}
            d = r.delta or {}
            w.writerow([_fmt(r.dt), r.n_c, r.stride] + [_fmt(f.get(k)) for k in ("P", "I", "B")]
                       + [_fmt(d.get(k)) for k in ("P", "I", "B")]
                       + [int(r.memory_ok), "" if r.converged is None else int(r.converged), r.error])
        return buf.getvalue()


def convergence_report(point: tuple[float, float], ladder: Sequence[tuple[float, int, int]],
                       base: PhysicsConfig | None = None, mode: str = "exact",
                       tolerances: dict | None = None) -> ConvergenceReport:
    """Figures of merit along a ladder of ``(dt, n_c, stride)`` grids.

    Each rung after the first carries the absolute change of P, I, B (in
    percentage points) with respect to the previous rung and is flagged as
    not converged when a change exceeds its tolerance.  Rungs whose memory
    window ``n_c dt`` is shorter than the bath memory time are marked.
    """
    if len(ladder) < 2:
        raise ConfigError("a convergence ladder needs at least two rungs")
    tol = dict(CONVERGENCE_TOLERANCES, **(tolerances or {}))
    temperature, scale = point
    base = base or PhysicsConfig()
    base = base.replace(**{"bath.temperature": float(temperature), "bath.scale": float(scale)})
    t_mem = 0.0 if scale == 0 else BathCorrelation(base.bath).memory_time()
    rungs = []
    prev = None
    for dt, n_c, stride in ladder:
        cfg = base.replace(**{"grid.dt": float(dt), "grid.n_c": int(n_c), "grid.t_subsample_stride": int(stride)})
        rung = Rung(float(dt), int(n_c), int(stride), memory_ok=(n_c * dt >= t_mem))
        try:
            fom, _ = compute_figures(cfg, mode)
            rung.figures = fom.percent()
        except ResourceError as exc:
            rung.error = f"ResourceError: {exc}"
        if rung.figures is not None and prev is not None and prev.figures is not None:
            rung.delta = {k: abs(rung.figures[k] - prev.figures[k]) for k in ("P", "I", "B")}
            rung.converged = all(rung.delta[k] <= tol[k] for k in rung.delta)
        rungs.append(rung)
        prev = rung
    return ConvergenceReport(float(temperature), float(scale), mode, rungs, t_mem)
