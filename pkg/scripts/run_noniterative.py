#!/usr/bin/env python3
"""BER sweep of the non-iterative receivers (RLS polynomial vs ELM)."""

import argparse
from pathlib import Path

from ledcomm.harness import ExperimentConfig, run_sweep, save_results


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--config", default=None,
                        help="config JSON (defaults to configs/noniterative.json)")
    parser.add_argument("--out", default="results/noniterative")
    parser.add_argument("--threads", type=int, default=1)
    parser.add_argument("--seed", type=int, default=None)
    args = parser.parse_args()

    path = args.config or Path(__file__).resolve().parents[1] / "configs" / "noniterative.json"
    cfg = ExperimentConfig.from_json(path)
    if args.seed is not None:
        cfg.master_seed = args.seed
    sweep = run_sweep(cfg, threads=args.threads)
    save_results(sweep, args.out)
    print(f"{'receiver':14s} {'snr':>6s} {'ber':>10s} {'cond(R^T R)':>12s}")
    for p in sweep.points:
        cond = p.diagnostics.get("condition_max", float("nan"))
        print(f"{p.receiver:14s} {p.snr_db:6.1f} {p.ber:10.3e} {cond:12.3e}")


if __name__ == "__main__":
    main()
