"""Command-line entry points: synth, train, select, backtest, oracle, report."""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from pathlib import Path

from . import config as config_mod
from .actor import PolicyParameters
from .critic import BoostedEnsemble
from .evaluation import backtest, baseline, dp_oracle, report
from .trainer import override, select_model, train


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="JSON run configuration")
    p.add_argument("--out", required=True, help="output file or directory")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fnac", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("synth", help="write the configured market (all splits) as one CSV")
    _common(p)

    p = sub.add_parser("train", help="train a policy and critic")
    _common(p)
    p.add_argument("--iterations", type=int)
    p.add_argument("--workers", type=int)

    p = sub.add_parser("select", help="two-stage hyperparameter selection over the config grid")
    _common(p)

    for verb, help_ in (("backtest", "evaluate a policy or baseline"), ("report", "write the CSV report set")):
        p = sub.add_parser(verb, help=help_)
        _common(p)
        src = p.add_mutually_exclusive_group(required=True)
        src.add_argument("--policy", help="policy JSON checkpoint")
        src.add_argument("--baseline", choices=("buy_hold", "sell_hold"))
        p.add_argument("--split", default="test")
        if verb == "report":
            p.add_argument("--critic", help="critic JSON checkpoint for feature importances")

    p = sub.add_parser("oracle", help="optimal discrete returns by dynamic programming")
    _common(p)
    p.add_argument("--split", default="test")
    return parser


def _load(args) -> config_mod.RunConfig:
    cfg = config_mod.load(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def cmd_synth(args) -> None:
    cfg = _load(args)
    series = cfg.split("all")
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    series.to_csv(args.out)


def cmd_train(args) -> None:
    cfg = _load(args)
    tcfg = cfg.train
    if args.iterations is not None:
        tcfg = override(tcfg, "iterations", args.iterations)
    if args.workers is not None:
        tcfg = override(tcfg, "workers", args.workers)
    splits = cfg.load_splits()
    policy, critic, rep = train(splits["train"], splits["valid"], tcfg, cfg.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rep.to_csv(out / "report.csv")
    rep.timing_csv(out / "timing.csv")
    policy.save(out / "policy.json")
    critic.save(out / "critic.json")
    (out / "train_config.json").write_text(json.dumps(config_mod.to_dict(tcfg), indent=2))


def cmd_select(args) -> None:
    cfg = _load(args)
    splits = cfg.load_splits()
    res = select_model(cfg.grid, (splits["train"], splits["valid"], splits["valid_actor"]), cfg.train, cfg.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    res.to_csv(out / "selection.csv")
    (out / "best_config.json").write_text(json.dumps(config_mod.to_dict(res.best), indent=2))


def _evaluate(args, cfg):
    series = cfg.split(args.split)
    env = cfg.train.env
    if args.baseline:
        return baseline(args.baseline, series, env)
    policy = PolicyParameters.load(args.policy)
    if policy.mode != env.mode:
        env = dataclasses.replace(env, mode=policy.mode)
    return backtest(series, policy, env, seeds=cfg.backtest_seeds, workers=cfg.train.workers)


def cmd_backtest(args) -> None:
    cfg = _load(args)
    res = _evaluate(args, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rets, pct = res.episode_returns.mean(axis=0), res.episode_returns_pct.mean(axis=0)
    cum, cum_std = res.cumulative_pct()
    with open(out / "episodes.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", "return", "return_pct", "cumulative_pct", "cumulative_pct_std"])
        for row in zip(res.dates, rets, pct, cum, cum_std):
            w.writerow([str(row[0]), *(repr(float(v)) for v in row[1:])])


def cmd_report(args) -> None:
    cfg = _load(args)
    res = _evaluate(args, cfg)
    critic = BoostedEnsemble.load(args.critic) if getattr(args, "critic", None) else None
    report(res, args.out, critic)


def cmd_oracle(args) -> None:
    cfg = _load(args)
    series = cfg.split(args.split)
    env = dataclasses.replace(cfg.train.env, mode="discrete")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "oracle.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", "optimal_return", "optimal_return_pct"])
        for ep in series:
            res = dp_oracle(ep, env)
            w.writerow([str(ep.date), repr(float(res.value)), repr(float(100 * res.value / ep.mid[env.warmup]))])


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "select": cmd_select, "backtest": cmd_backtest,
            "oracle": cmd_oracle, "report": cmd_report}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.verb](args)
    except Exception as exc:  # one-line machine-parsable failure
        msg = str(exc).replace("\n", " ")
        print(f"error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
