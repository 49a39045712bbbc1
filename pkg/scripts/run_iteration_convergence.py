#!/usr/bin/env python3
"""Per-iteration BER of the iterative ELM receiver at a few SNR points."""

import argparse

from ledcomm.harness import ExperimentConfig, run_sweep, save_results


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--snr", type=float, nargs="+",
                        default=[16.0, 18.0, 20.0, 22.0])
    parser.add_argument("--frames", type=int, default=200)
    parser.add_argument("--iterations", type=int, default=5)
    parser.add_argument("--out", default="results/iterations")
    parser.add_argument("--threads", type=int, default=1)
    parser.add_argument("--seed", type=int, default=20240904)
    args = parser.parse_args()

    cfg = ExperimentConfig(
        receivers=[{"kind": "elm-turbo", "training_length": 800,
                    "hidden_nodes": 150}],
        snr_db=args.snr,
        iterations=args.iterations,
        max_frames=args.frames, min_frames=args.frames,
        target_errors=10**9,
        master_seed=args.seed)
    sweep = run_sweep(cfg, threads=args.threads)
    save_results(sweep, args.out)

    print(f"{'snr':>6s} " + " ".join(f"iter{i + 1:>2d}" for i in range(args.iterations)))
    for p in sweep.points:
        iters = p.diagnostics.get("iter_errors", [])
        bers = [e / p.bits for e in iters]
        print(f"{p.snr_db:6.1f} " + " ".join(f"{b:7.1e}" for b in bers))


if __name__ == "__main__":
    main()
