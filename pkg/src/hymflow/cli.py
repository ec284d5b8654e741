"""Command-line entry point: ``hymflow <subcommand> ...``.

Exit codes: 0 every enabled verdict passed, 1 some verdict failed, 2 bad
input (config, checkpoint or arguments), 3 the flow aborted.
"""
from __future__ import annotations

import argparse
import sys

from .checkpoint import CheckpointError
from .config import ConfigError, parse_config
from .geometry import GeometryError, MetricError
from . import pipeline


def _load(path, args):
    with open(path, encoding="utf-8") as fh:
        cfg = parse_config(fh.read())
    return cfg.with_overrides(dt=args.dt, t_end=args.t_end, out=args.out, seed=args.seed)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hymflow", description="Hermitian-Yang-Mills flow lab on flat tori.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--dt", type=float, help="override flow.dt")
    common.add_argument("--t-end", type=float, dest="t_end", help="override flow.t_end")
    common.add_argument("--out", help="override output.dir")
    common.add_argument("--seed", type=int, help="override run.seed")
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_text in (("verify-metric", "certify the metric hypotheses"),
                            ("run", "integrate one flow and write diagnostics"),
                            ("compare-flows", "run both formulations and compare gauge invariants")):
        sp = sub.add_parser(name, parents=[common], help=help_text)
        sp.add_argument("config")
    dp = sub.add_parser("diagnose", help="diagnostics of a stored checkpoint")
    dp.add_argument("checkpoint")
    dp.add_argument("--phi", action="store_true", help="evaluate the weighted monotone quantity")
    dp.add_argument("--sigma-scan", action="store_true", dest="sigma_scan", help="scaled local energy scan")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "diagnose":
            rep = pipeline.diagnose(args.checkpoint, phi=args.phi, sigma_scan=args.sigma_scan)
        else:
            cfg = _load(args.config, args)
            action = {"verify-metric": pipeline.verify_metric, "run": pipeline.run_pipeline,
                      "compare-flows": pipeline.compare_flows}[args.command]
            rep = action(cfg)
    except (ConfigError, CheckpointError, GeometryError, MetricError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for line in rep.lines:
        print(line)
    return rep.code


if __name__ == "__main__":
    sys.exit(main())
