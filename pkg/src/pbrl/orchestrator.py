"""Synchronous generational training loop with evolution barriers.

Every iteration each agent collects ``horizon x envs_per_agent`` steps and
updates. Agents all advance in lockstep, so the per-agent step counter gates
evolution: an event fires when that counter exceeds ``n_start`` and has
crossed into a new ``n_evo`` window since the previous event.

Run directory::

    config.snapshot          resolved config (seed included)
    metrics/agent_<k>.csv    one row per agent per iteration
    events.log               JSON lines, one per evolution record
    checkpoints/ckpt_<step>.bin
"""
from __future__ import annotations

import csv
import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from . import config as config_mod
from .agents import build_learner
from .evolution import HYPER_SPACES, PopulationState, evolve_population
from .kernels import BACKEND
from .ndmath import PoisonedUpdateError
from .seeding import entropy_seed, restore_rng, rng_state, seed_streams

logger = logging.getLogger(__name__)

OUTPUT_ROOT_ENV = "PBRL_OUTPUT_ROOT"
BASE_COLUMNS = ["iteration", "env_steps", "agent_id", "mean_return_window",
                "fitness_at_last_event", "lr"]


class TrainingHalted(RuntimeError):
    def __init__(self, message, checkpoint_path):
        super().__init__(message)
        self.checkpoint_path = checkpoint_path


@dataclass
class RunResult:
    run_dir: Path
    iterations: int
    env_steps: int
    events: list = field(default_factory=list)
    checkpoints: list = field(default_factory=list)
    population: PopulationState | None = None


def hyper_space(cfg):
    return HYPER_SPACES[cfg.learner_kind]


def baseline_hypers(cfg):
    return {name: float(getattr(cfg.algo, name)) for name in hyper_space(cfg).names}


def initial_hypers(cfg, agent_id, seed):
    """pbrl samples each hyper from its range; baseline uses the fixed defaults.

    ``hyper_init`` ranges override both.
    """
    space = hyper_space(cfg)
    unknown = sorted(set(cfg.hyper_init) - set(space.names))
    if unknown:
        raise config_mod.ConfigError(
            f"hyper_init.{unknown[0]}: not a {cfg.learner_kind} hyperparameter "
            f"(choose from {', '.join(space.names)})")
    rng = seed_streams(seed, agent_id, -1, "hypers")
    if cfg.mode == "pbrl":
        return space.sample(rng, cfg.hyper_init)
    h = baseline_hypers(cfg)
    for d in space.dims:
        if d.name in cfg.hyper_init:
            lo, hi = cfg.hyper_init[d.name]
            h[d.name] = d.sample(rng, lo, hi)
    return space.finish(h)


def build_population(cfg, seed):
    agents = [build_learner(cfg, i, initial_hypers(cfg, i, seed), seed)
              for i in range(cfg.population)]
    return PopulationState(agents=agents)


def _fmt(x):
    if isinstance(x, float):
        return repr(x)
    return str(x)


def metrics_row(agent, iteration, space):
    window = agent.fitness_window
    mean_ret = float(np.mean(window)) if window else math.nan
    row = [iteration, agent.env_steps, agent.agent_id, mean_ret,
           float(agent.last_event_fitness), float(agent.current_lr)]
    row += [float(agent.hypers[name]) for name in space.names]
    return [_fmt(v) for v in row]


def evolution_due(cfg, steps, last_window):
    evo = cfg.evolution
    return steps > evo.n_start and steps // evo.n_evo > last_window


def population_state(cfg, pop, evo_rng, seed):
    return {
        "format": "pbrl-population",
        "config_hash": cfg.digest(),
        "config_text": config_mod.dumps(cfg),
        "seed": seed,
        "kernel_backend": BACKEND,
        "iteration": pop.iteration,
        "event_count": pop.event_count,
        "last_event_window": pop.last_event_window,
        "events": pop.events,
        "evolution_rng": rng_state(evo_rng),
        "agents": [a.state_dict() for a in pop.agents],
    }


def save_checkpoint(pop, path, cfg, evo_rng, seed):
    return ckpt.save(population_state(cfg, pop, evo_rng, seed), path)


def load_checkpoint(path):
    """Rebuild (cfg, population, evolution rng, seed) from a checkpoint file."""
    state = ckpt.load(path)
    if state.get("format") != "pbrl-population":
        raise ckpt.CheckpointError(f"{path}: not a population checkpoint")
    cfg = config_mod.loads(state["config_text"])
    seed = state["seed"]
    cfg.seed = seed
    pop = build_population(cfg, seed)
    for agent, agent_state in zip(pop.agents, state["agents"]):
        agent.load_state_dict(agent_state)
    pop.iteration = state["iteration"]
    pop.event_count = state["event_count"]
    pop.last_event_window = state["last_event_window"]
    pop.events = list(state["events"])
    return cfg, pop, restore_rng(state["evolution_rng"]), seed


class MetricsWriter:
    def __init__(self, run_dir, n_agents, space):
        self.dir = Path(run_dir) / "metrics"
        self.dir.mkdir(parents=True, exist_ok=True)
        self.space = space
        self.header = BASE_COLUMNS + list(space.names)
        self.paths = [self.dir / f"agent_{k}.csv" for k in range(n_agents)]

    def start(self, keep_through=None):
        """Open files; on resume keep only rows with iteration <= keep_through."""
        for path in self.paths:
            rows = []
            if keep_through is not None and path.exists():
                with open(path, newline="") as fh:
                    reader = csv.reader(fh)
                    next(reader, None)
                    rows = [r for r in reader if r and int(r[0]) <= keep_through]
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(self.header)
                w.writerows(rows)
        self.handles = [open(p, "a", newline="") for p in self.paths]
        self.writers = [csv.writer(h, lineterminator="\n") for h in self.handles]

    def write(self, pop):
        for agent, w in zip(pop.agents, self.writers):
            w.writerow(metrics_row(agent, pop.iteration, self.space))

    def flush(self):
        for h in self.handles:
            h.flush()

    def close(self):
        for h in self.handles:
            h.close()


def _write_events(path, events, mode="a"):
    with open(path, mode) as fh:
        for record in events:
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def resolve_run_dir(cfg):
    if cfg.out_dir:
        return Path(cfg.out_dir)
    root = Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))
    return root / f"{cfg.algorithm}-{cfg.env}-{cfg.mode}-n{cfg.population}-s{cfg.seed}"


def run_training(cfg, resume_from=None, stop_after_iterations=None, on_iteration=None):
    """Run (or resume) a population until the step budget is spent.

    ``stop_after_iterations`` ends the run early at that global iteration
    (a checkpoint is still written), which is how split runs are produced.
    ``on_iteration(pop, events)`` is called after every iteration.
    """
    if resume_from is not None:
        ck_cfg, pop, evo_rng, seed = load_checkpoint(resume_from)
        cfg.seed = seed
        if ck_cfg.digest() != cfg.digest():
            raise ckpt.CheckpointError(
                f"{resume_from}: checkpoint was written by a different run config")
    else:
        if cfg.seed is None:
            cfg.seed = entropy_seed()
        seed = cfg.seed
        cfg.validate()
        pop = build_population(cfg, seed)
        evo_rng = seed_streams(seed, -1, -1, "evolution")

    run_dir = resolve_run_dir(cfg)
    try:
        (run_dir / "checkpoints").mkdir(parents=True, exist_ok=True)
        config_mod.save(cfg, run_dir / "config.snapshot")
    except OSError as exc:
        raise OSError(f"cannot write run directory {run_dir}: {exc}") from exc

    space = hyper_space(cfg)
    writer = MetricsWriter(run_dir, cfg.population, space)
    events_path = run_dir / "events.log"
    if resume_from is not None:
        writer.start(keep_through=pop.iteration)
        _write_events(events_path, pop.events, mode="w")
    else:
        writer.start()
        events_path.write_text("")

    per_iter = cfg.steps_per_iteration()
    total_iters = math.ceil(cfg.total_steps / per_iter) if cfg.total_steps else 0
    if stop_after_iterations is not None:
        total_iters = min(total_iters, stop_after_iterations)
    if cfg.checkpoint_every:
        ckpt_every = cfg.checkpoint_every
    else:
        ckpt_every = 10 * max(1, math.ceil(cfg.evolution.n_evo / per_iter))

    result = RunResult(run_dir, pop.iteration, 0)
    parallel = not cfg.deterministic and cfg.workers > 1
    pool = ThreadPoolExecutor(cfg.workers) if parallel else None

    def checkpoint_path(tag=""):
        step = pop.agents[0].env_steps
        return run_dir / "checkpoints" / f"ckpt_{step}{tag}.bin"

    try:
        while pop.iteration < total_iters:
            try:
                if pool is not None:
                    list(pool.map(lambda a: a.train_iteration(), pop.agents))
                else:
                    for agent in pop.agents:
                        agent.train_iteration()
            except PoisonedUpdateError as exc:
                writer.flush()
                path = save_checkpoint(pop, checkpoint_path("_halt"), cfg, evo_rng, seed)
                halt = {"type": "halt", "step": pop.agents[0].env_steps,
                        "iteration": pop.iteration, "reason": str(exc)}
                _write_events(events_path, [halt])
                raise TrainingHalted(f"training halted: {exc}", path) from exc
            pop.iteration += 1
            writer.write(pop)
            steps = pop.agents[0].env_steps
            new_events = []
            if cfg.mode == "pbrl" and evolution_due(cfg, steps, pop.last_event_window):
                pop.last_event_window = steps // cfg.evolution.n_evo
                new_events = evolve_population(pop, space, cfg.evolution, evo_rng, steps)
                _write_events(events_path, new_events)
            if on_iteration is not None:
                on_iteration(pop, new_events)
            if pop.iteration % ckpt_every == 0 and pop.iteration < total_iters:
                writer.flush()
                result.checkpoints.append(
                    save_checkpoint(pop, checkpoint_path(), cfg, evo_rng, seed))
        writer.flush()
        result.checkpoints.append(save_checkpoint(pop, checkpoint_path(), cfg, evo_rng, seed))
    finally:
        writer.close()
        if pool is not None:
            pool.shutdown()

    result.iterations = pop.iteration
    result.env_steps = sum(a.env_steps for a in pop.agents)
    result.events = list(pop.events)
    result.population = pop
    return result
