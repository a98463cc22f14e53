"""Command-line entry point.

    mesorates --config FILE --seed N [--out DIR] [--trajectories N] [--full]
              [--threads N] [--no-plot]
    mesorates rates --k-r K --D D --sigma S [--dim 3] [--k-d KD] [--h H] [--eps E]

Exit codes: 0 success, 1 I/O failure, 2 configuration error, 3 compile
error, 4 a trajectory hit its cap or the result is flagged unreliable.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import config as C
from .io import jsonable, write_outputs
from .model import CompileError
from .rates import PhysicalParams, RatesError
from .rng import MAX_SEED

EXIT_OK = 0
EXIT_IO = 1
EXIT_CONFIG = 2
EXIT_COMPILE = 3
EXIT_CAP = 4


def _u64(text: str) -> int:
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= v <= MAX_SEED:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


# argparse exits with status 2 on usage errors, which doubles as the config code
def _run_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mesorates", description="Run a mesoscopic/microscopic experiment.")
    ap.add_argument("--config", required=True, type=Path, help="experiment TOML file")
    ap.add_argument("--seed", required=True, type=_u64, help="master seed (unsigned 64-bit)")
    ap.add_argument("--out", type=Path, help="output directory (default: experiment.output or results/<kind>)")
    ap.add_argument("--trajectories", type=_positive_int, help="override experiment.trajectories")
    ap.add_argument("--full", action="store_true", help="apply the [full] full-scale overrides")
    ap.add_argument("--threads", type=_positive_int, default=1)
    ap.add_argument("--no-plot", action="store_true", help="skip the PNG figures")
    return ap


def _rates_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mesorates rates", description="Print mesh-dependent rates as JSON.")
    ap.add_argument("--k-r", dest="k_r", type=float, required=True)
    ap.add_argument("--D", type=float, required=True)
    ap.add_argument("--sigma", type=float, required=True)
    ap.add_argument("--dim", type=int, default=3)
    ap.add_argument("--k-d", dest="k_d", type=float, default=0.0)
    ap.add_argument("--h", type=float, help="voxel width; adds rho and kd_meso")
    ap.add_argument("--eps", type=float, default=0.05)
    return ap


def _error(kind: str, message: str, **extra) -> None:
    print(json.dumps(jsonable({"error": kind, "message": message, **extra}), sort_keys=True),
          file=sys.stderr)


def rates_main(argv) -> int:
    from .experiments import channel_report
    args = _rates_parser().parse_args(argv)
    try:
        p = PhysicalParams(k_r=args.k_r, D=args.D, sigma=args.sigma, dim=args.dim, k_d=args.k_d)
        rep = channel_report(p, args.h, args.eps)
    except RatesError as exc:
        _error("config", str(exc))
        return EXIT_CONFIG
    print(json.dumps(jsonable(rep), indent=2, sort_keys=True))
    return EXIT_OK


def run_main(argv) -> int:
    from .runner import run
    args = _run_parser().parse_args(argv)
    try:
        cfg = C.load(args.config, seed=args.seed, trajectories=args.trajectories, full=args.full)
        bundle = run(cfg, args.seed, threads=args.threads)
    except C.ConfigError as exc:
        _error("config", str(exc))
        return EXIT_CONFIG
    except CompileError as exc:
        _error("compile", str(exc), channel=exc.channel, h_star=exc.h_star)
        return EXIT_COMPILE
    out = args.out or Path(cfg.output or f"results/{cfg.kind}")
    try:
        written = write_outputs(bundle, out)
    except OSError as exc:
        _error("io", f"cannot write outputs to {out}: {exc.strerror or exc}")
        return EXIT_IO
    if not args.no_plot:
        from .plotting import render
        try:
            written += render(bundle, out)
        except OSError as exc:
            _error("io", f"cannot write figures to {out}: {exc.strerror or exc}")
            for p in written:
                p.unlink(missing_ok=True)
            return EXIT_IO
    for p in written:
        print(p)
    if bundle.unreliable:
        _error("unreliable", "a trajectory hit its cap or too many samples were censored",
               threshold=0.10)
        return EXIT_CAP
    return EXIT_OK


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    if argv and argv[0] == "rates":
        return rates_main(argv[1:])
    if argv and argv[0] == "run":
        argv = argv[1:]
    return run_main(argv)


if __name__ == "__main__":
    sys.exit(main())
