"""Rank action-persistence values by validation return, then report test performance.

    python scripts/persistence_sweep.py --config configs/planted.json --out runs/persistence
"""
import argparse
import csv
import dataclasses
from pathlib import Path

import numpy as np

from fnac import config
from fnac.evaluation import backtest, dp_oracle
from fnac.trainer import select_model, train


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--config", default="configs/planted.json")
    ap.add_argument("--out", default="runs/persistence")
    ap.add_argument("--persistence", type=int, nargs="+", default=[1, 5, 10])
    ap.add_argument("--iterations", type=int)
    args = ap.parse_args()

    run = config.load(args.config)
    tcfg = run.train if args.iterations is None else dataclasses.replace(run.train, iterations=args.iterations)
    splits = run.load_splits()
    valid_actor = splits["valid_actor"] if len(splits.get("valid_actor", [])) else splits["valid"]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    sel = select_model({"env.persistence": args.persistence}, (splits["train"], splits["valid"], valid_actor), tcfg, run.seed)
    sel.to_csv(out / "selection.csv")

    rows = []
    for k in args.persistence:
        cfg = dataclasses.replace(tcfg, env=dataclasses.replace(tcfg.env, persistence=k))
        policy, _, rep = train(splits["train"], splits["valid"], cfg, run.seed)
        res = backtest(splits["test"], policy, cfg.env)
        row = {"persistence": k, "valid_return": rep.best_valid_return,
               "test_return": float(res.episode_returns.mean()),
               "test_return_pct": float(res.episode_returns_pct.mean())}
        if cfg.mode == "discrete":
            row["test_oracle_ratio"] = row["test_return"] / float(np.mean([dp_oracle(ep, cfg.env).value for ep in splits["test"]]))
        rows.append(row)
        print(row)
    rows.sort(key=lambda r: -r["valid_return"])
    with open(out / "ranking.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    print(f"best persistence: {sel.best.env.persistence}")


if __name__ == "__main__":
    main()
