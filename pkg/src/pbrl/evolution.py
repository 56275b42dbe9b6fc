"""Outer evolutionary loop: fitness, quartile partition, weight transfer, mutation."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .config import EvolutionConfig

logger = logging.getLogger(__name__)

NEG_INF = float("-inf")


@dataclass(frozen=True)
class HyperDim:
    name: str
    lower: float
    upper: float
    scale: str = "linear"  # or "log"

    def __post_init__(self):
        if not self.lower < self.upper:
            raise ValueError(f"{self.name}: lower {self.lower} must be < upper {self.upper}")
        if self.scale not in ("linear", "log"):
            raise ValueError(f"{self.name}: scale must be linear or log")
        if self.scale == "log" and self.lower <= 0:
            raise ValueError(f"{self.name}: log scale needs a positive lower bound")

    def clamp(self, value):
        return min(max(value, self.lower), self.upper)

    def to_unit(self, value):
        """Position of ``value`` in the declared scale, as a fraction of the range."""
        if self.scale == "log":
            return (math.log(value) - math.log(self.lower)) / (
                math.log(self.upper) - math.log(self.lower))
        return (value - self.lower) / (self.upper - self.lower)

    def sample(self, rng, lower=None, upper=None):
        lo = self.lower if lower is None else lower
        hi = self.upper if upper is None else upper
        if lo == hi:
            return float(lo)
        if self.scale == "log":
            return float(math.exp(rng.uniform(math.log(lo), math.log(hi))))
        return float(rng.uniform(lo, hi))


@dataclass(frozen=True)
class HyperSpace:
    dims: tuple
    ordered_pairs: tuple = ()

    @property
    def names(self):
        return [d.name for d in self.dims]

    def __getitem__(self, name):
        for d in self.dims:
            if d.name == name:
                return d
        raise KeyError(name)

    def validate(self, h):
        if set(h) != set(self.names):
            raise ValueError(f"hyperparameters {sorted(h)} do not match space {self.names}")
        for d in self.dims:
            v = h[d.name]
            if not (d.lower <= v <= d.upper) or math.isnan(v):
                raise ValueError(f"{d.name}={v} outside [{d.lower}, {d.upper}]")
        for lo, hi in self.ordered_pairs:
            if h[lo] > h[hi]:
                raise ValueError(f"{lo}={h[lo]} exceeds {hi}={h[hi]}")

    def contains(self, h):
        try:
            self.validate(h)
        except ValueError:
            return False
        return True

    def finish(self, h):
        """Clamp every value to bounds and re-sort inverted ordered pairs."""
        out = {d.name: d.clamp(h[d.name]) for d in self.dims}
        for lo, hi in self.ordered_pairs:
            if out[lo] > out[hi]:
                out[lo], out[hi] = out[hi], out[lo]
                out[lo] = self[lo].clamp(out[lo])
                out[hi] = self[hi].clamp(out[hi])
        return out

    def sample(self, rng, init_ranges=None):
        init_ranges = init_ranges or {}
        unknown = set(init_ranges) - set(self.names)
        if unknown:
            raise ValueError(f"initial ranges given for unknown hyperparameters {sorted(unknown)}")
        h = {}
        for d in self.dims:
            lo, hi = init_ranges.get(d.name, (d.lower, d.upper))
            h[d.name] = d.sample(rng, lo, hi)
        return self.finish(h)


# Mutation ranges per learner kind. LR-type values and the entropy coefficient
# live on a log scale, everything else is linear.
HYPER_SPACES = {
    "ppo": HyperSpace((
        HyperDim("kl_threshold", 0.008, 0.016),
        HyperDim("entropy_coeff", 1e-4, 1e-3, "log"),
        HyperDim("actor_std", 0.3, 1.0),
    )),
    "sac": HyperSpace((
        HyperDim("actor_lr", 1e-4, 1e-3, "log"),
        HyperDim("critic_lr", 1e-4, 1e-3, "log"),
        HyperDim("target_entropy", -20.0, -10.0),
    )),
    "ddpg": HyperSpace((
        HyperDim("actor_lr", 1e-4, 1e-3, "log"),
        HyperDim("critic_lr", 1e-4, 1e-3, "log"),
        HyperDim("sigma_min", 0.01, 0.1),
        HyperDim("sigma_max", 0.5, 1.0),
    ), ordered_pairs=(("sigma_min", "sigma_max"),)),
    "surrogate": HyperSpace((
        HyperDim("h1", 1e-3, 1.0, "log"),
        HyperDim("h2", 1e-3, 1.0, "log"),
    )),
}


# --- mutation operators -------------------------------------------------------

def mutate_perturb(h, space, factor_min, factor_max, rng):
    """Multiply every value by an independent U(factor_min, factor_max) draw."""
    out = {}
    for d in space.dims:
        out[d.name] = h[d.name] * rng.uniform(factor_min, factor_max)
    return space.finish(out)


def mutate_resample(h, space, rng):
    """Redraw every value uniformly (in its declared scale) within bounds."""
    return space.finish({d.name: d.sample(rng) for d in space.dims})


def mutate_dexpbt(h, space, beta_mut, mu_min, mu_max, rng):
    """With probability beta_mut per value, multiply or divide by mu ~ U(mu_min, mu_max)."""
    if not 0.0 <= beta_mut <= 1.0:
        raise ValueError(f"beta_mut must lie in [0, 1], got {beta_mut}")
    out = {}
    for d in space.dims:
        v = h[d.name]
        if rng.random() < beta_mut:
            mu = rng.uniform(mu_min, mu_max)
            v = v * mu if rng.random() < 0.5 else v / mu
        out[d.name] = v
    return space.finish(out)


def mutate(h, space, cfg: EvolutionConfig, rng):
    if cfg.mutation_scheme == "perturb":
        return mutate_perturb(h, space, cfg.perturb_factor_min, cfg.perturb_factor_max, rng)
    if cfg.mutation_scheme == "resample":
        return mutate_resample(h, space, rng)
    if cfg.mutation_scheme == "dexpbt":
        return mutate_dexpbt(h, space, cfg.beta_mut, cfg.mu_min, cfg.mu_max, rng)
    raise ValueError(f"unknown mutation scheme {cfg.mutation_scheme!r}")


# --- selection ----------------------------------------------------------------

def fitness(agent):
    """Mean return over the agent's current window; -inf when it is empty."""
    window = agent.fitness_window
    if not window:
        logger.warning("agent %s has no completed episodes; ranking it last",
                       getattr(agent, "agent_id", "?"))
        return NEG_INF
    return float(np.mean(window))


def partition_sizes(n):
    q = max(1, n // 4)
    return q, n - 2 * q, q


def rank_and_partition(fitnesses):
    """Indices of the top, middle and bottom groups, best first.

    Accepts a list of fitness values or a PopulationState. Ties rank the
    lower index higher.
    """
    if isinstance(fitnesses, PopulationState):
        fitnesses = [fitness(a) for a in fitnesses.agents]
    n = len(fitnesses)
    order = sorted(range(n), key=lambda i: (-fitnesses[i], i))
    if n < 2:
        return order, [], []
    top, mid, _ = partition_sizes(n)
    return order[:top], order[top:top + mid], order[top + mid:]


@dataclass
class PopulationState:
    agents: list
    iteration: int = 0
    event_count: int = 0
    last_event_window: int = -1
    events: list = field(default_factory=list)

    @property
    def size(self):
        return len(self.agents)

    def log(self, record):
        self.events.append(record)


def evolve_population(pop, space, cfg, rng, step):
    """Replace the bottom quartile with mutated copies of random top-quartile agents.

    Returns the event records appended to ``pop.events``.
    """
    n = pop.size
    if n < 2:
        record = {"type": "noop", "step": step, "reason": "population of one"}
        pop.log(record)
        for a in pop.agents:
            a.fitness_window.clear()
        return [record]

    fits = [fitness(a) for a in pop.agents]
    top, mid, bottom = rank_and_partition(fits)
    digests_before = [a.param_digest() for a in pop.agents]
    event_id = pop.event_count
    records = []
    for child_idx in bottom:
        parent_idx = top[int(rng.integers(len(top)))]
        parent, child = pop.agents[parent_idx], pop.agents[child_idx]
        old_hypers = dict(child.hypers)
        new_hypers = mutate(parent.hypers, space, cfg, rng)
        child.transfer_from(parent)
        child.hypers = new_hypers
        child.on_replaced()
        child.last_event_fitness = fits[parent_idx]
        records.append({
            "type": "replace",
            "event": event_id,
            "step": step,
            "parent_id": parent_idx,
            "child_id": child_idx,
            "parent_fitness": fits[parent_idx],
            "child_fitness": fits[child_idx],
            "parent_hypers": dict(parent.hypers),
            "old_hypers": old_hypers,
            "new_hypers": new_hypers,
        })
    for i in top + mid:
        pop.agents[i].last_event_fitness = fits[i]
    for a in pop.agents:
        a.fitness_window.clear()
    summary = {
        "type": "partition",
        "event": event_id,
        "step": step,
        "fitness": fits,
        "top": top,
        "mid": mid,
        "bottom": bottom,
        "digests_before": digests_before,
        "digests_after": [a.param_digest() for a in pop.agents],
    }
    pop.log(summary)
    for r in records:
        pop.log(r)
    pop.event_count += 1
    return [summary] + records
