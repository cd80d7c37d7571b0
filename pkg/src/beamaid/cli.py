"""Command-line entry point for grid sweeps."""
from __future__ import annotations

import argparse
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

from .harness import ConfigError, SweepConfig, load_config, run_sweep, write_results
from .protocols import CBS, C_JPBS, D_JPBS, PROTOCOL_KINDS

_PROTOCOL_NAMES = {"cbs": (CBS,), "djpbs": (D_JPBS,), "cjpbs": (C_JPBS,), "all": PROTOCOL_KINDS}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="beamaid", description="Sweep beam-training protocols over receiver positions.")
    ap.add_argument("--config", type=Path, help="flat TOML config file (SI units)")
    ap.add_argument("--protocol", choices=sorted(_PROTOCOL_NAMES), help="protocols to run (default: from config, else all)")
    ap.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
    ap.add_argument("--grid-step", type=float, help="grid spacing in meters")
    ap.add_argument("--realizations", type=int, help="seeded runs per grid point")
    ap.add_argument("--out", type=Path, help="output directory")
    ap.add_argument("--workers", type=int, help="worker processes (results do not depend on this)")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config) if args.config else SweepConfig()
        over = {}
        if args.protocol:
            over["protocols"] = _PROTOCOL_NAMES[args.protocol]
        if args.seed is not None:
            if not 0 <= args.seed < 2**64:
                raise ConfigError(f"seed: must be an unsigned 64-bit integer (got {args.seed})")
            over["seed"] = args.seed
        if args.grid_step is not None:
            over["grid_step"] = args.grid_step
        if args.realizations is not None:
            over["realizations"] = args.realizations
        if args.out is not None:
            over["out"] = str(args.out)
        if args.workers is not None:
            over["workers"] = args.workers
        cfg = replace(cfg, **over)
    except ConfigError as exc:
        print(f"beamaid: config error: {exc}", file=sys.stderr)
        return 2

    t0 = time.perf_counter()
    try:
        result = run_sweep(cfg)
        out = Path(cfg.out) / "sweep.csv"
        write_results(result, out)
    except OSError as exc:
        print(f"beamaid: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # pragma: no cover - last-resort diagnostic
        print(f"beamaid: sweep failed: {exc!r}", file=sys.stderr)
        return 1
    n_pts = len({(r.x_m, r.y_m) for r in result.rows})
    print(f"{n_pts} points, {len(result.rows)} rows in {time.perf_counter() - t0:.1f} s -> {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
