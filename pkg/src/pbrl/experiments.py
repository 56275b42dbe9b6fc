"""Evaluation and comparison harnesses used by the CLI and the acceptance suite."""
from __future__ import annotations

import csv
import math
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import default_run_config
from .envpack import VecEnv
from .orchestrator import load_checkpoint, run_training
from .plotting import plot_runs
from .seeding import seed_streams

SCHEMES = ("perturb", "dexpbt", "resample")

# Deliberately poor starting curvature weights: every agent ascends slowly.
MISINITIALIZED_SURROGATE = {"h1": [1e-3, 1e-2], "h2": [1e-3, 1e-2]}


def ranking_fitness(agent):
    """Fitness at the final evolution event, else the current window mean."""
    if not math.isnan(agent.last_event_fitness):
        return agent.last_event_fitness
    if agent.fitness_window:
        return float(np.mean(agent.fitness_window))
    return -math.inf


def select_agent(pop, which):
    """Resolve 'best', 'worst' or an integer index to an agent index."""
    n = pop.size
    if which in ("best", "worst"):
        keys = [ranking_fitness(a) for a in pop.agents]
        order = sorted(range(n), key=lambda i: (-keys[i], i))
        return order[0] if which == "best" else order[-1]
    try:
        idx = int(which)
    except (TypeError, ValueError):
        raise ValueError(f"agent must be best, worst or an index, got {which!r}") from None
    if not 0 <= idx < n:
        raise IndexError(f"agent index {idx} out of range for population of n={n}")
    return idx


def evaluate_agent(cfg, agent, episodes, seed):
    """Returns of ``episodes`` exploration-free episodes."""
    if episodes < 1:
        raise ValueError("episodes must be ≥ 1")
    if cfg.env == "surrogate":
        return [agent.true_objective()] * episodes
    rng = seed_streams(seed, agent.agent_id, 0, "eval")
    env = VecEnv(cfg.env, 1, [rng])
    returns = []
    while len(returns) < episodes:
        result = env.step(agent.act_deterministic(env.obs))
        returns += [r for _, r in result.completed_episode_returns]
    return returns[:episodes]


def evaluate_checkpoint(path, episodes, which="best", seed=0):
    cfg, pop, _, _ = load_checkpoint(path)
    idx = select_agent(pop, which)
    returns = evaluate_agent(cfg, pop.agents[idx], episodes, seed)
    return idx, float(np.mean(returns)), float(np.std(returns)), returns


def surrogate_config(mode="pbrl", seed=0, scheme="perturb", population=4, total_steps=3000,
                     out_dir=None, hyper_init=None):
    cfg = default_run_config("surrogate", "surrogate", population=population,
                             total_steps=total_steps, mode=mode, seed=seed,
                             out_dir=None if out_dir is None else str(out_dir))
    cfg.evolution = replace(cfg.evolution, mutation_scheme=scheme)
    cfg.hyper_init = dict(MISINITIALIZED_SURROGATE if hyper_init is None else hyper_init)
    return cfg


def best_true_objective(pop):
    return max(a.true_objective() for a in pop.agents)


def pbrl_vs_baseline_trial(seed, workdir, total_steps=3000, population=4):
    """Best-agent true objective for a PBRL run and its seed-matched baseline."""
    workdir = Path(workdir)
    out = {}
    for mode in ("pbrl", "baseline"):
        cfg = surrogate_config(mode, seed, population=population, total_steps=total_steps,
                               out_dir=workdir / f"{mode}-s{seed}")
        result = run_training(cfg)
        out[mode] = best_true_objective(result.population)
    return out["pbrl"], out["baseline"]


def compare_mutation_schemes(out_dir, seed=0, base_cfg=None, metric="mean_return_window"):
    """Run the same population once per mutation scheme; plot and tabulate.

    Returns (rows, svg_path, csv_path, summary_path).
    """
    out_dir = Path(out_dir)
    base = base_cfg or surrogate_config(seed=seed)
    rows, dirs = [], []
    for scheme in SCHEMES:
        cfg = replace(base, seed=seed, out_dir=str(out_dir / scheme),
                      evolution=replace(base.evolution, mutation_scheme=scheme),
                      hyper_init=dict(base.hyper_init))
        result = run_training(cfg)
        pop = result.population
        best = max(pop.agents, key=ranking_fitness)
        final_eval = (best_true_objective(pop) if cfg.env == "surrogate"
                      else float(np.mean(evaluate_agent(cfg, best, 3, seed))))
        n_events = sum(1 for e in result.events if e["type"] == "partition")
        rows.append({
            "scheme": scheme,
            "events": n_events,
            "best_fitness": ranking_fitness(best),
            "mean_fitness": float(np.mean([ranking_fitness(a) for a in pop.agents])),
            "best_final_eval": final_eval,
        })
        dirs.append(out_dir / scheme)
    svg, csv_path = plot_runs(dirs, out_dir / "mutation_comparison.svg", metric=metric,
                              labels=list(SCHEMES))
    summary = out_dir / "summary.csv"
    with open(summary, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
    return rows, svg, csv_path, summary
