#!/usr/bin/env python3
"""Desk-scale Stage-1 weight sweep: baseline vs fixed FD regularizer rungs.

Sweeps the auxiliary weight over {0, 1e-4, 1e-3} across three seed triplets
and prints the per-rung means of the fresh-audit metrics, mirroring the
layout of the 10k weight-sweep table.  Writes runs + aggregate CSVs.

Usage: python scripts/stage1_trend.py [out_dir] [--epochs N]
"""

import argparse

import numpy as np

from resgrad import harness
from resgrad.stage1 import Stage1TrainConfig


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("out_dir", nargs="?", default="runs/stage1_trend")
    ap.add_argument("--epochs", type=int, default=3000)
    ap.add_argument("--seeds", default="0,1,2")
    args = ap.parse_args()

    template = harness.RunConfig(
        stage="stage1",
        stage1=Stage1TrainConfig(
            epochs=args.epochs, n_interior=768, n_boundary=192,
            n_val_interior=384, n_val_boundary=96, bank_n=32,
        ),
        out_dir=args.out_dir,
    )
    seeds = [int(s) for s in args.seeds.split(",")]
    summaries, agg = harness.sweep(
        template, arms=["fd_fixed"], seeds=seeds, weights=[0.0, 1e-4, 1e-3]
    )

    print(f"\n{'weight':>8} {'best val':>12} {'rel L2(u)':>12} {'rel L2(grad)':>12} "
          f"{'res RMSE':>12} {'gradR RMSE':>12}")
    for weight in (0.0, 1e-4, 1e-3):
        rows = [
            s for s in summaries
            if (weight == 0.0 and s.arm == "off")
            or (weight > 0 and s.arm == "fd_fixed" and s.config["stage1"]["aux_weight"] == weight)
        ]
        cols = [
            np.mean([r.best_val for r in rows]),
            np.mean([r.metrics["rel_l2_u"] for r in rows]),
            np.mean([r.metrics["rel_l2_grad_u"] for r in rows]),
            np.mean([r.metrics["residual_rmse"] for r in rows]),
            np.mean([r.metrics["grad_r_rmse"] for r in rows]),
        ]
        label = "off" if weight == 0.0 else f"{weight:g}"
        print(f"{label:>8} " + " ".join(f"{c:12.4e}" for c in cols))


if __name__ == "__main__":
    main()
