"""Command line: ``kinbridge run|sweep CONFIG`` and ``kinbridge compare DIR``.

Exit codes: 0 success, 2 invalid configuration, 3 a run or comparison
failed (per-point failures leave error.json next to the other artifacts).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from ..errors import ConfigError, KinbridgeError
from .config import load_config
from .runner import compare_bogolyubov, grad_sweep, run_experiment

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

log = logging.getLogger("kinbridge")


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="kinbridge", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name, help_text in (("run", "execute the configured mode at every schedule point"),
                            ("sweep", "run the scaling sweep and summarize the trends")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("config", help="TOML experiment file")
        p.add_argument("--seed", type=int, help="replace the seed list by SEED, SEED+1, ...")
        p.add_argument("--out-dir", help="artifact directory (overrides output_dir)")
        p.add_argument("--threads", type=int, help="worker threads for the seed loop")
        p.add_argument("--dry-run", action="store_true",
                       help="validate and print the resolved schedule without running")
    p = sub.add_parser("compare", help="Bogolyubov vs Boltzmann table of a bridge run")
    p.add_argument("artifact_dir")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def _describe(cfg) -> str:
    lines = [f"mode: {cfg.mode}", f"seeds: {cfg.seeds}", f"output_dir: {cfg.output_dir}",
             "point  mu        N        delta_t   replicas"]
    for k, pt in enumerate(cfg.schedule.points):
        lines.append(f"{k:5d}  {pt.mu:<8.4g}  {pt.n_particles:<7d}  {pt.delta_t:<8.4g}  "
                     f"{cfg.replicas[k]}")
    return "\n".join(lines)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.command == "compare":
            rows = compare_bogolyubov(args.artifact_dir)
            for point, mu, pair, value in rows:
                print(f"point {point}  mu={mu:g}  {pair}: {value:.4g}")
            return EXIT_OK
        cfg = load_config(args.config).with_overrides(args.seed, args.out_dir, args.threads)
        if args.dry_run:
            print(_describe(cfg))
            return EXIT_OK
        runner = grad_sweep if args.command == "sweep" else run_experiment
        report = runner(cfg)
    except ConfigError as exc:
        print(f"configuration error:\n{exc}", file=sys.stderr)
        return EXIT_CONFIG
    except KinbridgeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    for p in report.points + report.control:
        tag = " (control)" if p.get("control") else ""
        if p["status"] != "ok":
            print(f"point {p['point']}{tag}: {p['type']}: {p['message']}", file=sys.stderr)
    if report.trends:
        print(json.dumps(report.trends, indent=1, default=str))
    print(f"artifacts in {report.out_dir}")
    return report.exit_code


if __name__ == "__main__":
    sys.exit(main())
