"""Command-line entry point.

Four subcommands cover the experiment cycle:

  gen-data   simulate behavior-policy sessions into a dataset directory
  train      off-policy training from a dataset, writing checkpoints
  eval       online test of a policy (trained, random, or myopic greedy)
  sweep      eval across a grid of alpha or top-N values

Every command writes a resolved-config snapshot (config.json) into its
output directory, so any artifact can be reproduced from the snapshot
alone. Output paths are taken relative to $RECADS_OUTPUT_ROOT when that
is set (absolute paths are used as given).

Exit codes: 0 success, 2 configuration error, 3 data error, 4 runtime
failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import auction, config as cfgmod
from .baselines import MyopicGreedy, RandomPolicy
from .domain import NO_AD_ID
from .env import BehaviorPolicy, Environment, generate_log
from .errors import ConfigError, DataError, UsageError
from .logio import read_catalog, read_log, validate_log, write_catalog, write_log
from .train import (make_agents, run_actor_test, run_online_test,
                    make_greedy_actor, summarize_metrics, train_offpolicy)

SNAPSHOT = "config.json"


def _resolve(arg: str) -> Path:
    path = Path(arg)
    if not path.is_absolute():
        path = Path(os.environ.get("RECADS_OUTPUT_ROOT", ".")) / path
    return path


def _out_dir(arg: str) -> Path:
    path = _resolve(arg)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create output directory {path}: {exc}") from None
    return path


def _write_jsonl(path: Path, rows) -> None:
    with open(path, "w") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")


def _load_dataset(data_dir: str):
    base = _resolve(data_dir)
    _, snap = cfgmod.read_snapshot(base / SNAPSHOT)
    catalog = read_catalog(base / "catalog.json")
    records = read_log(base / "sessions.jsonl")
    return snap.env, catalog, records


def _restore_agents(model_dir: str, catalog):
    base = _resolve(model_dir)
    _, snap = cfgmod.read_snapshot(base / SNAPSHOT)
    rs_agent, as_agent = make_agents(catalog, snap.train)
    rs_agent.load(base / "rs.ckpt")
    as_agent.load(base / "as.ckpt")
    return rs_agent, as_agent, snap.train


def _rule_from(train_cfg, bidding, alpha, top_n) -> auction.BiddingRule:
    merged = dataclasses.replace(
        train_cfg,
        **{k: v for k, v in
           (("bidding", bidding), ("alpha", alpha), ("top_n", top_n))
           if v is not None})
    return merged.rule()


# -- gen-data -----------------------------------------------------------------


def cmd_gen_data(args) -> int:
    cfg = cfgmod.apply_overrides(
        cfgmod.load_config(args.config),
        env={"seed": args.seed},
        data={"sessions": args.sessions, "p_ad": args.p_ad})
    out = _out_dir(args.out)
    env = Environment(cfg.env)
    records = generate_log(env, BehaviorPolicy(cfg.data.p_ad),
                           cfg.data.sessions)
    errors, warnings = validate_log(records, history_cap=cfg.env.history_cap)
    if errors:
        raise DataError("generated log failed validation: " + errors[0])
    write_catalog(out / "catalog.json", env.catalog)
    write_log(out / "sessions.jsonl", records)
    cfgmod.write_snapshot(out / SNAPSHOT, cfg, "gen-data")

    n = len(records)
    n_sessions = len({r.session_id for r in records})
    with_ads = sum(r.ad_id != NO_AD_ID for r in records)
    print(f"dataset written to {out}")
    print(f"sessions      {n_sessions}")
    print(f"records       {n}")
    print(f"mean length   {n / n_sessions:.3f}")
    print(f"ad fraction   {with_ads / n:.4f}")
    print(f"dwell/list    {sum(r.r_rs for r in records) / n:.4f} min")
    if warnings:
        print(f"warnings      {len(warnings)} (truncated sessions)")
    return 0


# -- train --------------------------------------------------------------------


def cmd_train(args) -> int:
    cfg = cfgmod.load_config(args.config)
    cfg = cfgmod.apply_overrides(
        cfg, train={"seed": args.seed, "gamma": args.gamma,
                    "epochs": args.epochs, "bidding": args.bidding,
                    "alpha": args.alpha, "top_n": args.top_n})
    env_cfg, catalog, records = _load_dataset(args.data)
    # histories were generated under the dataset's cap; training must
    # reconstruct states with the same cap or the log fails validation
    cfg = cfgmod.apply_overrides(
        cfg, train={"history_cap": env_cfg.history_cap})
    out = _out_dir(args.out)

    rs_agent, as_agent = make_agents(catalog, cfg.train)
    rs_path, as_path = out / "rs.ckpt", out / "as.ckpt"
    resumed = False
    if rs_path.exists() and as_path.exists() and not args.no_resume:
        rs_agent.load(rs_path)
        as_agent.load(as_path)
        resumed = True
        print(f"resuming from step {rs_agent.store.step_count}")
    base_step = rs_agent.store.step_count

    result = train_offpolicy(records, catalog, cfg.train,
                             agents=(rs_agent, as_agent))
    rs_agent.save(rs_path)
    as_agent.save(as_path)
    rows = [{**row, "step": base_step + row["step"]}
            for row in result.step_rows]
    mode = "a" if resumed else "w"
    with open(out / "curves.jsonl", mode) as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")
    cfgmod.write_snapshot(out / SNAPSHOT, cfg, "train")

    print(f"model written to {out}")
    for row in result.epoch_rows:
        print(f"epoch {row['epoch']}  steps {base_step + row['opt_steps']}  "
              f"loss_rs {row['loss_rs']:.5f}  loss_as {row['loss_as']:.5f}")
    return 0


# -- eval ---------------------------------------------------------------------


def _build_actor(cfg, env_cfg, catalog, args):
    """(actor, description) for the requested policy."""
    policy = cfg.eval.policy
    if policy == "ram":
        if args.model is None:
            raise ConfigError("policy 'ram' needs --model")
        rs_agent, as_agent, train_cfg = _restore_agents(args.model, catalog)
        rule = _rule_from(train_cfg, args.bidding, args.alpha, args.top_n)
        return make_greedy_actor(rs_agent, as_agent, rule), f"ram {rule}"
    if policy == "random":
        rng = np.random.default_rng(cfg.eval.seed + 1)
        return RandomPolicy(rng, k=env_cfg.k), "random"
    greedy = MyopicGreedy(k=env_cfg.k)
    return greedy, "myopic-greedy"


def _fresh_eval_env(env_cfg, catalog, seed) -> Environment:
    return Environment(dataclasses.replace(env_cfg, seed=seed), catalog)


def _print_table(summary: dict) -> None:
    print(f"{'metric':<8}{'mean':>12}{'std':>12}")
    for metric, key in (("R_rs", "r_rs"), ("R_as", "r_as"), ("R_rev", "rev")):
        print(f"{metric:<8}{summary[key + '_mean']:>12.4f}"
              f"{summary[key + '_std']:>12.4f}")


def cmd_eval(args) -> int:
    cfg = cfgmod.apply_overrides(
        cfgmod.load_config(args.config),
        eval={"sessions": args.sessions, "seed": args.seed,
              "policy": args.policy})
    env_cfg, catalog, _ = _load_dataset(args.data)
    actor, label = _build_actor(cfg, env_cfg, catalog, args)
    env = _fresh_eval_env(env_cfg, catalog, cfg.eval.seed)
    metrics = run_actor_test(env, actor, cfg.eval.sessions)
    summary = summarize_metrics(metrics)

    out = _out_dir(args.out)
    _write_jsonl(out / "eval.jsonl",
                 [{"session": i, "r_rs": m.r_rs, "r_as": m.r_as,
                   "revenue": m.revenue} for i, m in enumerate(metrics)])
    (out / "summary.json").write_text(
        json.dumps({"policy": label, **summary}, indent=1) + "\n")
    cfgmod.write_snapshot(out / SNAPSHOT, cfg, "eval")

    print(f"policy {label}  sessions {summary['sessions']}  "
          f"seed {cfg.eval.seed}")
    _print_table(summary)
    return 0


# -- sweep --------------------------------------------------------------------


def _parse_values(param: str, text: str) -> list:
    values = []
    for chunk in text.split(","):
        chunk = chunk.strip()
        if not chunk:
            continue
        if param == "alpha":
            values.append(float(chunk))
        elif chunk == "all":
            values.append(10 ** 9)  # clamped to every admissible pair
        else:
            values.append(int(chunk))
    if not values:
        raise ConfigError("no sweep values given")
    return values


def cmd_sweep(args) -> int:
    cfg = cfgmod.apply_overrides(
        cfgmod.load_config(args.config),
        eval={"sessions": args.sessions, "seed": args.seed})
    env_cfg, catalog, _ = _load_dataset(args.data)
    rs_agent, as_agent, _tcfg = _restore_agents(args.model, catalog)
    values = _parse_values(args.param, args.values)

    rows = []
    for value in values:
        rule = auction.RamL(value) if args.param == "alpha" \
            else auction.RamN(value)
        env = _fresh_eval_env(env_cfg, catalog, cfg.eval.seed)
        metrics = run_online_test(env, rs_agent, as_agent, rule,
                                  cfg.eval.sessions)
        rows.append({"param": args.param, "value": value,
                     **summarize_metrics(metrics)})

    out = _out_dir(args.out)
    _write_jsonl(out / "sweep.jsonl", rows)
    cfgmod.write_snapshot(out / SNAPSHOT, cfg, "sweep")

    print(f"sweep over {args.param}  sessions/point {cfg.eval.sessions}  "
          f"seed {cfg.eval.seed}")
    print(f"{'value':>10}{'R_rs':>12}{'R_as':>12}{'R_rev':>12}")
    for row in rows:
        shown = row["value"] if row["value"] < 10 ** 9 else "all"
        print(f"{shown:>10}{row['r_rs_mean']:>12.4f}"
              f"{row['r_as_mean']:>12.4f}{row['rev_mean']:>12.4f}")
    return 0


# -- wiring -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="recads",
        description="Two-level recommendation and ad-insertion agents "
                    "with a synthetic user environment.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file (see config.py)")
        p.add_argument("--seed", type=int, help="override the seed")

    p = sub.add_parser("gen-data", help="simulate a behavior-policy dataset")
    common(p)
    p.add_argument("--out", default="data", help="dataset directory")
    p.add_argument("--sessions", type=int, help="number of sessions")
    p.add_argument("--p-ad", dest="p_ad", type=float,
                   help="behavior ad-insertion probability")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="off-policy training from a dataset")
    common(p)
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", default="model", help="checkpoint directory")
    p.add_argument("--gamma", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--bidding", choices=["ram-l", "ram-n"])
    p.add_argument("--alpha", type=float, help="RAM-l revenue weight")
    p.add_argument("--top-n", dest="top_n", type=int, help="RAM-n subset size")
    p.add_argument("--no-resume", action="store_true",
                   help="ignore existing checkpoints in --out")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="online test of a policy")
    common(p)
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--model", help="checkpoint directory (policy 'ram')")
    p.add_argument("--out", default="eval", help="metrics directory")
    p.add_argument("--policy", choices=["ram", "random", "greedy"])
    p.add_argument("--sessions", type=int)
    p.add_argument("--bidding", choices=["ram-l", "ram-n"])
    p.add_argument("--alpha", type=float)
    p.add_argument("--top-n", dest="top_n", type=int)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="eval over a grid of alpha or top-N")
    common(p)
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--model", required=True, help="checkpoint directory")
    p.add_argument("--param", required=True, choices=["alpha", "top_n"])
    p.add_argument("--values", required=True,
                   help="comma-separated values; 'all' allowed for top_n")
    p.add_argument("--out", default="sweep", help="output directory")
    p.add_argument("--sessions", type=int)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except (UsageError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
