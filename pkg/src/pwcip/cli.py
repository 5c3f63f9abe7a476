"""Command-line entry point: ``pwcip <subcommand> [--config F] [--out D] ...``."""

import argparse
import os
import sys

from . import lab
from .errors import PwcipError

COMMANDS = ("validate-medium", "geodesics", "forward", "carleman", "invert", "sweep")
_FIGURE_KIND = {"geodesics": "geodesics", "forward": "forward", "carleman": "carleman",
                "invert": "invert", "sweep": "sweep"}


def build_parser():
    p = argparse.ArgumentParser(prog="pwcip", description="Travel-time inversion experiments.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="key = value config file")
        s.add_argument("--out", help="output directory (default out/<command>)")
        s.add_argument("--seed", type=int, help="override sweep.seed")
        s.add_argument("--threads", type=int, default=1, help="worker processes for sweeps")
        s.add_argument("--figures", action="store_true", help="also write PNG plots")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return 2
    # keep BLAS single-threaded so results do not depend on the machine
    os.environ.setdefault("OMP_NUM_THREADS", "1")
    overrides = {} if args.seed is None else {"sweep.seed": args.seed}
    out = args.out or os.path.join("out", args.command)
    try:
        cfg = lab.load_config(args.config, overrides)
        if args.command == "validate-medium":
            rep = lab.run_validate_medium(cfg, out)
            summary = f"passed={rep.passed}"
        elif args.command == "geodesics":
            rep = lab.run_geodesic_report(cfg, out)
            summary = (f"A_min={rep['amplitude']['min']:.6g} "
                       f"max_rate={rep['curvature']['max_rate']:.4g}")
        elif args.command == "forward":
            rep = lab.run_forward_crosscheck(cfg, out)
            summary = f"crosscheck passed={rep['crosscheck']['passed']}"
        elif args.command == "carleman":
            rep = lab.run_carleman_report(cfg, out)
            summary = " ".join(f"{k}: lambda0={v['lambda0']} C={v['C']:.4g}" for k, v in rep.items())
        elif args.command == "invert":
            _, diag = lab.run_inversion(cfg, out)
            summary = f"J={diag['J']:.4g} rel_n_error={diag['relative_n_error']:.4g}"
        else:
            _, fits, _ = lab.run_sweep(cfg, out, threads=args.threads)
            summary = " ".join(f"{k}: slope={v['slope']:.3g}" for k, v in fits.items())
        if args.figures and args.command in _FIGURE_KIND:
            lab.render_figures(_FIGURE_KIND[args.command], out)
    except PwcipError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    print(f"{args.command}: {summary} -> {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
