"""Command line front end.

Examples
--------
Single point, both lab-frame modes::

    qdphotons --point 4,1 --modes exact,qrt --out out/

Desk sweep with four workers, resuming earlier output::

    qdphotons --sweep --workers 4 --resume --out sweep/

The on-disk cache of influence tables lives in ``$QDPHOTONS_CACHE`` (unset:
no caching).
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .model import ConfigError, PhysicsConfig, load_config
from .pathint import MODES
from .sweep import DESK_LAMBDAS, DESK_TEMPERATURES, SweepSpec, convergence_report, run_sweep

DEFAULT_LADDER = ((0.5, 7, 8), (0.5, 7, 4), (0.25, 12, 4))


def _point(text: str) -> tuple[float, float]:
    try:
        t, lam = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError("expected T,LAMBDA, e.g. 4,1") from None
    return t, lam


def _modes(text: str) -> list[str]:
    modes = [m.strip() for m in text.split(",") if m.strip()]
    bad = [m for m in modes if m not in MODES]
    if bad:
        raise argparse.ArgumentTypeError(f"unknown modes {bad}; choose from {','.join(MODES)}")
    return modes


def _ladder(text: str) -> list[tuple[float, int, int]]:
    out = []
    for rung in text.split(";"):
        dt, n_c, stride = rung.split(",")
        out.append((float(dt), int(n_c), int(stride)))
    return out


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qdphotons",
                                description="Photon correlations and figures of merit of a phonon-coupled QD emitter.")
    p.add_argument("--config", type=Path, help="JSON configuration (sections system, pulses, bath, grid, nonmarkov)")
    what = p.add_mutually_exclusive_group(required=True)
    what.add_argument("--sweep", action="store_true", help="desk-scale (T, lambda) sweep")
    what.add_argument("--point", type=_point, metavar="T,LAMBDA", help="single parameter point")
    p.add_argument("--modes", type=_modes, default=["exact", "qrt"], metavar="LIST",
                   help="comma separated subset of exact,qrt,pme (default exact,qrt)")
    p.add_argument("--preset", choices=("desk", "accuracy"), default=None,
                   help="grid preset (default: grid of --config, else desk)")
    p.add_argument("--resume", action="store_true", help="reuse finished tasks found in --out")
    p.add_argument("--workers", type=int, default=1, metavar="N")
    p.add_argument("--out", type=Path, default=Path("results"), metavar="DIR")
    p.add_argument("--no-n", action="store_true", help="skip the non-Markovianity measure")
    p.add_argument("--convergence", nargs="?", const="", default=None, metavar="LADDER",
                   help="with --point: convergence ladder 'dt,n_c,stride;...' (default "
                        + ";".join(",".join(map(str, r)) for r in DEFAULT_LADDER) + ")")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        base = load_config(args.config) if args.config else PhysicsConfig()
        preset = args.preset or (None if args.config else "desk")
        if args.convergence is not None:
            if args.point is None:
                raise ConfigError("--convergence requires --point")
            ladder = _ladder(args.convergence) if args.convergence else list(DEFAULT_LADDER)
            report = convergence_report(args.point, ladder, base, mode=args.modes[0])
            args.out.mkdir(parents=True, exist_ok=True)
            text = report.to_csv()
            (args.out / "convergence.csv").write_text(text)
            sys.stdout.write(text)
            return 0 if report.converged else 1
        temps, lams = ((DESK_TEMPERATURES, DESK_LAMBDAS) if args.sweep
                       else ((args.point[0],), (args.point[1],)))
        spec = SweepSpec(temps, lams, args.modes, preset, args.out, args.workers, base,
                         resume=args.resume, with_n=not args.no_n)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    result = run_sweep(spec)
    sys.stdout.write(result.results_csv.read_text())
    if not result.ok:
        print(f"{result.failed} row(s) failed; see the error column", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
