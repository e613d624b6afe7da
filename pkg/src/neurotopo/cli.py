"""Command-line entry point.

Exit status: 0 on success, 1 on usage errors (bad flags, missing or invalid
input files), 2 on runtime errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .errors import ConfigError, NeurotopoError


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _parser() -> argparse.ArgumentParser:
    p = _Parser(prog="neurotopo", description="Neuron topology experiments.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    r = sub.add_parser("run", help="train according to a JSON config")
    r.add_argument("--config", required=True)
    r.add_argument("--output-dir", help="override output_dir from the config")

    t = sub.add_parser("topology", help="Betti numbers of a point-cloud CSV")
    t.add_argument("--points", required=True)
    g = t.add_mutually_exclusive_group()
    g.add_argument("--scale", type=float)
    g.add_argument("--adaptive", action="store_true", help="quarter of the diameter (default)")
    t.add_argument("--max-dim", type=int, default=3, choices=(1, 2, 3))
    t.add_argument("--subsample", type=int, help="farthest-point subsample cap")
    t.add_argument("--json", action="store_true")

    c = sub.add_parser("check", help="structural checks of a run directory")
    c.add_argument("--run", required=True)

    s = sub.add_parser("sample", help="sample a manifold into a point-cloud CSV")
    s.add_argument("--spec", required=True)
    s.add_argument("--out", required=True)

    k = sub.add_parser("sharpness", help="top Hessian eigenvalue at a snapshot")
    k.add_argument("--run", required=True)
    k.add_argument("--step", type=int, required=True)

    rep = sub.add_parser("report", help="SVG charts of loss, Betti numbers and 1/K")
    rep.add_argument("--run", required=True)
    rep.add_argument("--out", required=True)
    return p


def _need_file(path: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"file not found: {path}")
    return p


def _need_run(path: str) -> Path:
    p = Path(path)
    if not (p / "manifest.json").is_file():
        raise UsageError(f"not a run directory: {path}")
    return p


def _cmd_run(args) -> int:
    from .harness import load_config, run

    cfg = load_config(_need_file(args.config))
    if args.output_dir:
        cfg = cfg.with_overrides(output_dir=str(Path(args.output_dir).resolve()))
    run(cfg, quiet=False)
    return 0


def _cmd_topology(args) -> int:
    from .particles import read_csv
    from .topology import betti_profile

    pts = read_csv(_need_file(args.points))
    prof = betti_profile(pts, scale=args.scale, max_dim=args.max_dim, subsample=args.subsample)
    if args.json:
        print(json.dumps({"b0": prof.b0, "b1": prof.b1, "b2": prof.b2, "scale": prof.scale_used, "n_points": prof.n_points}))
    else:
        print(f"{prof.b0},{prof.b1},{prof.b2},{prof.scale_used!r},{prof.n_points}")
    return 0


def _cmd_check(args) -> int:
    from .harness.checks import check_run

    print(json.dumps(check_run(_need_run(args.run)).to_dict(), indent=1))
    return 0


def _cmd_sample(args) -> int:
    from .geometry import ManifoldSpec, sample
    from .particles import write_csv

    try:
        spec = json.loads(_need_file(args.spec).read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"{args.spec}: invalid JSON ({exc.msg})") from None
    write_csv(sample(ManifoldSpec.from_dict(spec)), args.out)
    return 0


def _cmd_sharpness(args) -> int:
    from .harness import RunLog
    from .harness.checks import sharpness_at

    log = RunLog.load(_need_run(args.run))
    if args.step not in log.snapshot_steps():
        raise UsageError(f"no snapshot at step {args.step}; available: {log.snapshot_steps()}")
    est = sharpness_at(log, args.step)
    eta = log.manifest["eta"]
    print(json.dumps({
        "step": args.step, "k_hat": est.k_hat, "eta_star": est.eta_star, "eta_times_k": eta * est.k_hat,
        "iterations": est.iterations_used, "residual": est.residual, "converged": est.converged,
    }))
    return 0


def _cmd_report(args) -> int:
    from .harness.report import write_report

    write_report(_need_run(args.run), args.out)
    return 0


COMMANDS = {
    "run": _cmd_run,
    "topology": _cmd_topology,
    "check": _cmd_check,
    "sample": _cmd_sample,
    "sharpness": _cmd_sharpness,
    "report": _cmd_report,
}


def main(argv=None) -> int:
    try:
        args = _parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError) as exc:
        print(f"neurotopo {args.command}: {exc}", file=sys.stderr)
        return 1
    except (NeurotopoError, OSError, ValueError, ArithmeticError) as exc:
        print(f"neurotopo {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
