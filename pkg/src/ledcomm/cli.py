"""Command line front end: run sweeps, single points, or the acceptance suite."""

from __future__ import annotations

import argparse
import json
import subprocess
import sys
from pathlib import Path

from .harness import ExperimentConfig, run_point, run_sweep, save_results


def _load_config(path: str, seed_override: int | None) -> ExperimentConfig:
    cfg = ExperimentConfig.from_json(path)
    if seed_override is not None:
        cfg.master_seed = seed_override
    return cfg


def _cmd_sweep(args) -> int:
    cfg = _load_config(args.config, args.seed)
    sweep = run_sweep(cfg, threads=args.threads)
    json_path, csv_path = save_results(sweep, args.out)
    print(f"wrote {json_path} and {csv_path}")
    for p in sweep.points:
        print(f"  {p.receiver:28s} snr={p.snr_db:6.2f} dB  "
              f"ber={p.ber:.3e}  ({p.errors}/{p.bits} bits, {p.frames} frames)")
    return 0


def _cmd_point(args) -> int:
    cfg = _load_config(args.config, args.seed)
    if args.frames is not None:
        cfg.max_frames = args.frames
        cfg.min_frames = args.frames
    labels = [r.label for r in cfg.resolved_receivers()]
    kinds = [r.kind for r in cfg.resolved_receivers()]
    if args.receiver in labels:
        idx = labels.index(args.receiver)
    elif args.receiver in kinds:
        idx = kinds.index(args.receiver)
    else:
        print(f"receiver {args.receiver!r} not in config "
              f"(have: {', '.join(labels)})", file=sys.stderr)
        return 2
    result = run_point(cfg, idx, args.snr)
    print(json.dumps(result.to_dict(), indent=1))
    return 0


def _cmd_verify(args) -> int:
    target = Path(args.tests) if args.tests else Path("tests/test_acceptance.py")
    if not target.exists():
        print(f"acceptance suite not found at {target}", file=sys.stderr)
        return 2
    cmd = [sys.executable, "-m", "pytest", str(target), "-v"] + args.pytest_args
    return subprocess.run(cmd).returncode


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ledcomm",
        description="Coded LED link simulator: BER sweeps for polynomial "
                    "and ELM post-distortion receivers.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_sweep = sub.add_parser("sweep", help="run a full receiver x SNR sweep")
    p_sweep.add_argument("-c", "--config", required=True, help="config JSON path")
    p_sweep.add_argument("-o", "--out", default="results", help="output directory")
    p_sweep.add_argument("--threads", type=int, default=1)
    p_sweep.add_argument("--seed", type=int, default=None,
                         help="override the master seed")
    p_sweep.set_defaults(func=_cmd_sweep)

    p_point = sub.add_parser("point", help="run one receiver at one SNR")
    p_point.add_argument("-c", "--config", required=True)
    p_point.add_argument("--receiver", required=True,
                         help="receiver kind or label from the config")
    p_point.add_argument("--snr", type=float, required=True)
    p_point.add_argument("--frames", type=int, default=None,
                         help="fixed frame count (overrides stopping rule)")
    p_point.add_argument("--seed", type=int, default=None)
    p_point.set_defaults(func=_cmd_point)

    p_verify = sub.add_parser("verify", help="run the acceptance test suite")
    p_verify.add_argument("--tests", default=None,
                          help="path to the acceptance test module")
    p_verify.add_argument("pytest_args", nargs="*", default=[])
    p_verify.set_defaults(func=_cmd_verify)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
