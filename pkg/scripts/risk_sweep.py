"""Sweep mean-volatility lambda and RCVaR rho; tabulate per-step reward dispersion.

    python scripts/risk_sweep.py --config configs/noisy.json --seeds 0 1 --out runs/risk
"""
import argparse
import csv
import dataclasses
from pathlib import Path

from fnac import config
from fnac.evaluation import backtest, report
from fnac.risk import RiskSpec
from fnac.trainer import train


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--config", default="configs/noisy.json")
    ap.add_argument("--out", default="runs/risk")
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--lams", type=float, nargs="+", default=[0.0, 5e-4, 1e-3, 2e-3])
    ap.add_argument("--rhos", type=float, nargs="+", default=[0.0, 100.0, 300.0, 1000.0])
    ap.add_argument("--rcvar-alpha", type=float, default=0.5)
    ap.add_argument("--scale", type=float, default=1e5, help="notional used to express rewards for the penalties")
    args = ap.parse_args()

    run = config.load(args.config)
    splits = run.load_splits()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sweeps = [("lambda", v, RiskSpec("mean_volatility", lam=v, scale=args.scale)) for v in args.lams]
    sweeps += [("rho", v, RiskSpec("rcvar", alpha=args.rcvar_alpha, rho_mode="fixed", rho=v, scale=args.scale))
               for v in args.rhos]
    rows = []
    for knob, value, spec in sweeps:
        cfg = dataclasses.replace(run.train, risk=spec)
        for seed in args.seeds:
            policy, _, _ = train(splits["train"], splits["valid"], cfg, seed)
            res = backtest(splits["test"], policy, cfg.env)
            report(res, out / f"{knob}{value:g}_seed{seed}")
            r = res.rewards
            rows.append([knob, repr(value), seed, repr(float(r.std())), repr(float(r.mean())),
                         repr(res.mean_abs_allocation())])
            print(rows[-1])
    with open(out / "risk_sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["knob", "value", "seed", "reward_std", "reward_mean", "mean_abs_allocation"])
        w.writerows(rows)


if __name__ == "__main__":
    main()
