#!/usr/bin/env python3
"""Paired OFF vs fixed-shell comparison on the annulus benchmark.

Trains both arms on matched seeds, prints the per-seed wall metrics with the
paired win counts, and reports the exact two-sided sign-test p-value for the
wall BC audit.  Pass an FD wall-slice file (see scripts/make_wall_reference.py)
to also get the reference-anchored RMSE columns.

Usage: python scripts/stage2_shell_effect.py [out_dir] [--epochs N]
         [--seeds 0,1,2] [--reference wall.bin]
"""

import argparse

from resgrad import harness
from resgrad.stage2 import Stage2TrainConfig


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("out_dir", nargs="?", default="runs/stage2_shell")
    ap.add_argument("--epochs", type=int, default=2000)
    ap.add_argument("--seeds", default="0,1,2")
    ap.add_argument("--reference", default=None)
    args = ap.parse_args()

    template = harness.RunConfig(
        stage="stage2",
        stage2=Stage2TrainConfig(
            epochs=args.epochs, n_interior=768, n_boundary=256, n_pairs=64,
            n_val_interior=256, n_val_boundary=96, n_val_pairs=32,
            shell_counts=(6, 24, 24), reference_slice=args.reference,
        ),
        out_dir=args.out_dir,
    )
    seeds = [int(s) for s in args.seeds.split(",")]
    summaries, _ = harness.sweep(template, arms=["off", "shell_fixed"], seeds=seeds)

    by_key = {(s.arm, s.config["stage2"]["seed_init"]): s for s in summaries}
    wins = 0
    print(f"\n{'seed':>4} {'off wall BC':>14} {'shell wall BC':>14} {'off probe':>12} {'shell probe':>12}")
    for seed in seeds:
        off = by_key[("off", seed)]
        shell = by_key[("shell_fixed", seed)]
        better = shell.metrics["wall_bc_rmse"] < off.metrics["wall_bc_rmse"]
        wins += int(better)
        print(f"{seed:>4} {off.metrics['wall_bc_rmse']:14.5e} "
              f"{shell.metrics['wall_bc_rmse']:14.5e} "
              f"{off.metrics['shell_probe']:12.4e} {shell.metrics['shell_probe']:12.4e}"
              + ("   shell wins" if better else ""))
    p = harness.paired_sign_test(wins, len(seeds))
    print(f"\nshell wins {wins}/{len(seeds)} on the wall BC audit; "
          f"two-sided sign test p = {p:.5f}")


if __name__ == "__main__":
    main()
