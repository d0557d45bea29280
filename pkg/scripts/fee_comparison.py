"""Train continuous agents under the constant and the step fee and compare order sizes.

    python scripts/fee_comparison.py --config configs/oscillating.json --seeds 0 1 2 --out runs/fees

Writes one report directory per (fee, seed) plus ``order_sizes.csv`` with the
median non-forced order size of every run.
"""
import argparse
import csv
import dataclasses
from pathlib import Path

import numpy as np

from fnac import config
from fnac.env import FeeSchedule
from fnac.evaluation import backtest, report
from fnac.trainer import train

FEES = {"constant": FeeSchedule("constant", 0.5), "step": FeeSchedule.step_default()}


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--config", default="configs/oscillating.json")
    ap.add_argument("--out", default="runs/fees")
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    args = ap.parse_args()

    run = config.load(args.config)
    splits = run.load_splits()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for name, fee in FEES.items():
        cfg = dataclasses.replace(run.train, env=dataclasses.replace(run.train.env, mode="continuous", fee=fee))
        for seed in args.seeds:
            policy, critic, _ = train(splits["train"], splits["valid"], cfg, seed)
            res = backtest(splits["test"], policy, cfg.env)
            report(res, out / f"{name}_seed{seed}", critic)
            sizes = res.order_sizes()
            rows.append([name, seed, repr(float(np.median(sizes))), repr(float(np.mean(sizes))),
                         repr(float(res.episode_returns.mean()))])
            print(rows[-1])
    with open(out / "order_sizes.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["fee", "seed", "median_order_size", "mean_order_size", "mean_episode_return"])
        w.writerows(rows)


if __name__ == "__main__":
    main()
