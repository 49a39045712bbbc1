#!/usr/bin/env python3
"""BER sweep comparing every receiver family against the genie bound."""

import argparse
from pathlib import Path

from ledcomm.harness import ExperimentConfig, run_sweep, save_results


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--config", default=None,
                        help="config JSON (defaults to configs/receivers.json)")
    parser.add_argument("--out", default="results/receivers")
    parser.add_argument("--threads", type=int, default=1)
    parser.add_argument("--seed", type=int, default=None)
    args = parser.parse_args()

    path = args.config or Path(__file__).resolve().parents[1] / "configs" / "receivers.json"
    cfg = ExperimentConfig.from_json(path)
    if args.seed is not None:
        cfg.master_seed = args.seed
    sweep = run_sweep(cfg, threads=args.threads)
    save_results(sweep, args.out)

    receivers = [r.label for r in cfg.resolved_receivers()]
    print(f"{'snr':>6s} " + " ".join(f"{r:>28s}" for r in receivers))
    for snr in cfg.snr_db:
        row = [sweep.point(r, snr).ber for r in receivers]
        print(f"{snr:6.1f} " + " ".join(f"{b:28.3e}" for b in row))


if __name__ == "__main__":
    main()
