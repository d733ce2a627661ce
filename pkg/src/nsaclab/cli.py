"""Command-line entry point: ``nsaclab <kind> [--config FILE] [--out DIR]``."""

import argparse
import json
import os
import sys
from pathlib import Path

from .config import KINDS, default_config, load_config
from .errors import NsacError
from .harness import default_threads, run

_HELP = {
    "profile": "tabulate the optimal profile and the layer constants",
    "simulate": "run the diffuse-interface model from a prepared profile",
    "mcf": "track a front under convected mean curvature flow",
    "converge": "diffuse-to-sharp convergence study over an eps sweep",
    "spectrum": "lowest eigenvalue of the linearized operator over an eps sweep",
    "expansion": "checks of the auxiliary fields and height equations",
}


def build_parser():
    parser = argparse.ArgumentParser(prog="nsaclab", description="Diffuse and sharp interface experiments.")
    sub = parser.add_subparsers(dest="kind", required=True)
    for kind in KINDS:
        p = sub.add_parser(kind, help=_HELP[kind])
        p.add_argument("--config", type=Path, help="INI-style configuration file (defaults are used otherwise)")
        p.add_argument("--out", type=Path, help="output directory (default $NSACLAB_OUT or ./runs/<kind>)")
        p.add_argument("--threads", type=int, default=None, help="worker processes for sweeps ($NSACLAB_THREADS)")
        p.add_argument("--plot", action="store_true", help="also write PNG figures")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.kind) if args.config else default_config(args.kind)
    except (NsacError, OSError) as exc:
        print(f"nsaclab: configuration error: {exc}", file=sys.stderr)
        return 2
    if args.plot:
        cfg.values["output"]["plots"] = True
    out = args.out or Path(os.environ.get("NSACLAB_OUT", "runs")) / args.kind
    threads = args.threads if args.threads is not None else default_threads()
    try:
        manifest = run(cfg, out, threads=max(1, threads))
    except NsacError as exc:
        print(f"nsaclab: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    print(json.dumps(dict(kind=manifest["kind"], out=str(out), wall_time=round(manifest["wall_time"], 3),
                          summary=manifest["summary"]), indent=2, default=float))
    return 0


if __name__ == "__main__":
    sys.exit(main())
