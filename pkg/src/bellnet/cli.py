"""Command-line entry point.

    bellnet solve --mdp mdp.json [--method exact|policy-iteration|value-iteration]
    bellnet train --config cfg.json [--seed N] [--out DIR]
    bellnet eval --config cfg.json --checkpoint model.json [--target]
    bellnet sweep depth|order|transfer --config cfg.json [--seed N] [--out DIR] [--jobs N]
    bellnet export-mdp --config cfg.json [--target] --out mdp.json

Exit codes: 0 success, 2 configuration error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .environments import build_cliff_mdp, non_cliff_states
from .experiments import (
    ExperimentConfig,
    checked_optimum,
    load_config,
    nerr,
    optimal_action_fraction,
    run_experiment,
    write_policy_csv,
)
from .mdp import NumericError, load_mdp, save_mdp, unvec
from .model import forward, load_model, save_model
from .solvers import optimal_q, policy_iteration, value_iteration
from .training import init_model, sample_q_bar, train, write_loss_history

EXIT_CONFIG = 2
EXIT_NUMERIC = 3

log = logging.getLogger("bellnet")


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
        cfg.train.seed = args.seed
    return cfg


def _out_dir(args, cfg) -> Path:
    out = Path(args.out or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_solve(args):
    mdp = load_mdp(args.mdp)
    q0 = np.zeros(mdp.num_pairs)
    if args.method == "exact":
        report = optimal_q(mdp)
    elif args.method == "policy-iteration":
        report = policy_iteration(mdp, args.eval_steps, args.steps, q0)
    else:
        report = value_iteration(mdp, args.steps, q0)
    out = {
        "method": args.method,
        "residual": report.residual,
        "iterations_used": report.iterations_used,
        "q": report.q.tolist(),
        "policy": np.argmax(report.policy, axis=1).tolist(),
    }
    text = json.dumps(out)
    if args.out:
        Path(args.out).write_text(text)
    else:
        print(text)


def cmd_train(args):
    cfg = _config(args)
    out = _out_dir(args, cfg)
    mdp = build_cliff_mdp(cfg.grid, cfg.gamma)
    model = init_model(cfg.depth, cfg.filter_order, cfg.train.discount(mdp), cfg.train,
                       cfg.temperature, cfg.weight_shared)
    model, history = train(model, mdp, cfg.train)
    save_model(model, out / "model.json")
    write_loss_history(out / "loss_history.csv", history)
    q_star = checked_optimum(mdp)
    q_bar = sample_q_bar(mdp, cfg.train.q_bar, np.random.default_rng([cfg.seed, 0, 2]), cfg.train.discount(mdp))
    q_hat, _, _ = forward(model, mdp, q_bar)
    write_policy_csv(out / "policy_source.csv", cfg.grid, mdp, q_hat, q_star)
    print(json.dumps({"final_loss": history[-1] if history else None, "nerr": nerr(q_hat, q_star),
                      "checkpoint": str(out / "model.json")}))


def cmd_eval(args):
    cfg = _config(args)
    spec = cfg.transfer_target if args.target else cfg.grid
    if spec is None:
        raise ValueError("--target needs a transfer section in the config")
    mdp = build_cliff_mdp(spec, cfg.gamma)
    model = load_model(args.checkpoint)
    q_star = checked_optimum(mdp)
    q_bar = sample_q_bar(mdp, cfg.train.q_bar, np.random.default_rng([cfg.seed, 0, 2]), cfg.train.discount(mdp))
    q_hat, _, _ = forward(model, mdp, q_bar, depth=args.depth)
    if args.out:
        out = _out_dir(args, cfg)
        write_policy_csv(out / f"policy_{'target' if args.target else 'source'}.csv", spec, mdp, q_hat, q_star)
    print(json.dumps({
        "nerr": nerr(q_hat, q_star),
        "optimal_action_fraction": optimal_action_fraction(q_hat, q_star, mdp.num_states, non_cliff_states(spec)),
        "policy": np.argmax(unvec(q_hat, mdp.num_states), axis=1).tolist(),
    }))


def cmd_sweep(args):
    raw = json.loads(Path(args.config).read_text()) if args.config else {}
    sweep = raw.setdefault("sweep", {})
    if sweep.setdefault("variable", args.kind) != args.kind:
        raise ValueError(f"config describes a {sweep['variable']!r} sweep, not {args.kind!r}")
    cfg = ExperimentConfig.from_dict(raw)
    if args.seed is not None:
        cfg.seed = args.seed
    paths = run_experiment(cfg, _out_dir(args, cfg), jobs=args.jobs)
    print(json.dumps({k: str(v) for k, v in paths.items()}))


def cmd_export(args):
    cfg = _config(args)
    spec = cfg.transfer_target if args.target else cfg.grid
    if spec is None:
        raise ValueError("--target needs a transfer section in the config")
    save_mdp(build_cliff_mdp(spec, cfg.gamma), args.out)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bellnet", description="Unrolled dynamic programming via graph filters")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="run a classical solver on an MDP file")
    s.add_argument("--mdp", required=True)
    s.add_argument("--method", choices=["exact", "policy-iteration", "value-iteration"], default="exact")
    s.add_argument("--steps", type=int, default=100, help="improvement (or value-iteration) steps")
    s.add_argument("--eval-steps", type=int, default=10)
    s.add_argument("--out")
    s.set_defaults(func=cmd_solve)

    t = sub.add_parser("train", help="train BellNet and write a checkpoint")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="nerr of a checkpoint on an environment")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--target", action="store_true", help="evaluate on the transfer target")
    e.add_argument("--depth", type=int, help="inference depth (weight-shared models only)")
    e.set_defaults(func=cmd_eval)

    w = sub.add_parser("sweep", help="run a full experiment")
    w.add_argument("kind", choices=["depth", "order", "transfer"])
    w.add_argument("--jobs", type=int, default=1)
    w.set_defaults(func=cmd_sweep)

    x = sub.add_parser("export-mdp", help="write a grid environment as MDP JSON")
    x.add_argument("--target", action="store_true")
    x.set_defaults(func=cmd_export)

    for sp in (t, e, w, x):
        sp.add_argument("--config")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", required=sp is x)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, KeyError, TypeError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return 0


if __name__ == "__main__":
    sys.exit(main())
