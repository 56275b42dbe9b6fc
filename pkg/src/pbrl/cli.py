"""Command-line entry point: train, eval, plot, inspect, compare, defaults."""
from __future__ import annotations

import argparse
import logging
import math
import os
import sys
from pathlib import Path

from . import config as config_mod
from .checkpoint import CheckpointError
from .experiments import compare_mutation_schemes, evaluate_checkpoint, ranking_fitness
from .orchestrator import OUTPUT_ROOT_ENV, TrainingHalted, load_checkpoint, run_training
from .plotting import MetricError, plot_runs


def _agent_arg(text):
    if text in ("best", "worst"):
        return text
    try:
        return int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"expected best, worst or an integer index, got {text!r}") from None


def build_parser():
    p = argparse.ArgumentParser(
        prog="pbrl",
        description="Population-based training of PPO, SAC and DDPG agents.",
        epilog=f"Relative run directories are placed under ${OUTPUT_ROOT_ENV} when set.")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    t = sub.add_parser("train", help="launch or resume a training run")
    t.add_argument("--config", required=True, help="TOML run config")
    t.add_argument("--seed", type=int, default=None,
                   help="master seed (drawn from entropy and recorded when omitted)")
    t.add_argument("--out", default=None, help="run directory (overrides run.out_dir)")
    t.add_argument("--deterministic", action="store_true",
                   help="sequential agent order; required for bit-exact replay")
    t.add_argument("--workers", type=int, default=None, help="thread pool size")
    t.add_argument("--resume", default=None, metavar="CKPT", help="resume from checkpoint")

    e = sub.add_parser("eval", help="evaluate one agent of a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--episodes", type=int, default=10)
    e.add_argument("--agent", type=_agent_arg, default="best", help="best, worst or INDEX")
    e.add_argument("--seed", type=int, default=0, help="evaluation env seed")

    pl = sub.add_parser("plot", help="learning curves as SVG (plus CSV of points)")
    pl.add_argument("--runs", nargs="+", required=True, metavar="DIR")
    pl.add_argument("--out", required=True, metavar="FILE.svg")
    pl.add_argument("--metric", default="mean_return_window")
    pl.add_argument("--per-agent", action="store_true", help="also draw each agent's curve")
    pl.add_argument("--labels", nargs="+", default=None)

    i = sub.add_parser("inspect", help="print the population table of a checkpoint")
    i.add_argument("--checkpoint", required=True)

    c = sub.add_parser("compare", help="run every mutation scheme under one seed")
    c.add_argument("--out", required=True, metavar="DIR")
    c.add_argument("--config", default=None, help="base config (default: surrogate demo)")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--metric", default="mean_return_window")

    d = sub.add_parser("defaults", help="print a complete default config")
    d.add_argument("--algorithm", default="ppo", choices=sorted(config_mod.ALGO_CONFIGS))
    d.add_argument("--env", default="pendulum")
    d.add_argument("--population", type=int, default=4)
    return p


def _resolve_out(path):
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if path and root and not Path(path).is_absolute():
        return str(Path(root) / path)
    return path


def cmd_train(args):
    cfg = config_mod.load(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out_dir = args.out
    cfg.out_dir = _resolve_out(cfg.out_dir)
    if args.deterministic:
        cfg.deterministic = True
    if args.workers is not None:
        cfg.workers = args.workers
    try:
        result = run_training(cfg, resume_from=args.resume)
    except TrainingHalted as exc:
        print(f"error: {exc}", file=sys.stderr)
        print(f"diagnostic checkpoint: {exc.checkpoint_path}", file=sys.stderr)
        return 3
    n_events = sum(1 for e in result.events if e.get("type") == "partition")
    print(f"run directory: {result.run_dir}")
    print(f"seed {cfg.seed}, iterations {result.iterations}, env steps {result.env_steps}, "
          f"evolution events {n_events}")
    return 0


def cmd_eval(args):
    if args.episodes < 1:
        raise ValueError("episodes must be ≥ 1")
    idx, mean, std, _ = evaluate_checkpoint(args.checkpoint, args.episodes, args.agent, args.seed)
    print(f"agent {idx}: {mean:.6g} ± {std:.6g} over {args.episodes} episodes")
    return 0


def cmd_plot(args):
    if args.labels and len(args.labels) != len(args.runs):
        raise ValueError("--labels must match --runs in length")
    svg, csv_path = plot_runs(args.runs, args.out, args.metric, args.per_agent, args.labels)
    print(f"wrote {svg} and {csv_path}")
    return 0


def cmd_inspect(args):
    cfg, pop, _, seed = load_checkpoint(args.checkpoint)
    names = list(pop.agents[0].hypers)
    print(f"{cfg.algorithm}/{cfg.env} mode={cfg.mode} n={pop.size} seed={seed} "
          f"iteration={pop.iteration} events={pop.event_count}")
    header = ["agent", "env_steps", "fitness"] + names
    rows = []
    for a in pop.agents:
        f = ranking_fitness(a)
        rows.append([str(a.agent_id), str(a.env_steps),
                     "-inf" if math.isinf(f) else f"{f:.6g}"]
                    + [f"{a.hypers[n]:.6g}" for n in names])
    widths = [max(len(h), *(len(r[k]) for r in rows)) for k, h in enumerate(header)]
    print("  ".join(h.rjust(w) for h, w in zip(header, widths)))
    for r in rows:
        print("  ".join(c.rjust(w) for c, w in zip(r, widths)))
    return 0


def cmd_compare(args):
    base = config_mod.load(args.config) if args.config else None
    rows, svg, _, summary = compare_mutation_schemes(_resolve_out(args.out), args.seed, base,
                                                     args.metric)
    for r in rows:
        print(f"{r['scheme']:>9}  events={r['events']}  best={r['best_fitness']:.6g}  "
              f"final_eval={r['best_final_eval']:.6g}")
    print(f"wrote {svg} and {summary}")
    return 0


def cmd_defaults(args):
    cfg = config_mod.default_run_config(args.algorithm, args.env, population=args.population)
    sys.stdout.write(config_mod.dumps(cfg))
    return 0


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "plot": cmd_plot, "inspect": cmd_inspect,
            "compare": cmd_compare, "defaults": cmd_defaults}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except MetricError as exc:
        print(f"error: {exc}", file=sys.stderr)
    except (config_mod.ConfigError, CheckpointError, ValueError, IndexError,
            FileNotFoundError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
    return 1


if __name__ == "__main__":
    sys.exit(main())
