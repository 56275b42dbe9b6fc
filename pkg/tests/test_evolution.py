import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pbrl.config import ConfigError, EvolutionConfig
from pbrl.evolution import (HYPER_SPACES, HyperDim, HyperSpace, PopulationState,
                            evolve_population, fitness, mutate, mutate_dexpbt, mutate_perturb,
                            mutate_resample, partition_sizes, rank_and_partition)

PPO = HYPER_SPACES["ppo"]
DDPG = HYPER_SPACES["ddpg"]


class Stub:
    """Minimal population member: one parameter vector and an optimizer counter."""

    def __init__(self, agent_id, window, hypers=None):
        self.agent_id = agent_id
        self.fitness_window = list(window)
        self.hypers = hypers or {"h1": 0.5, "h2": 0.5}
        self.theta = np.full(3, float(agent_id))
        self.opt_step = agent_id
        self.last_event_fitness = math.nan
        self.replaced = 0

    def param_digest(self):
        return self.theta.tobytes().hex()

    def transfer_from(self, other):
        self.theta = other.theta.copy()
        self.opt_step = other.opt_step

    def on_replaced(self):
        self.replaced += 1


# --- fitness / partition ------------------------------------------------------

def test_fitness_examples(caplog):
    assert fitness(Stub(0, [1, 2, 3])) == 2.0
    assert fitness(Stub(0, [-5])) == -5.0
    with caplog.at_level(logging.WARNING):
        assert fitness(Stub(7, [])) == -math.inf
    assert "7" in caplog.text


@pytest.mark.parametrize("n,sizes", [(8, (2, 4, 2)), (4, (1, 2, 1)), (6, (1, 4, 1)),
                                     (2, (1, 0, 1)), (3, (1, 1, 1)), (16, (4, 8, 4))])
def test_partition_sizes(n, sizes):
    assert partition_sizes(n) == sizes


def test_rank_ties_prefer_lower_index():
    top, mid, bottom = rank_and_partition([1.0, 1.0, 1.0, 1.0])
    assert (top, mid, bottom) == ([0], [1, 2], [3])


def test_rank_accepts_population():
    pop = PopulationState([Stub(i, [i]) for i in range(4)])
    assert rank_and_partition(pop) == ([3], [2, 1], [0])


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6) | st.just(-math.inf), min_size=2, max_size=40))
def test_partition_is_permutation(fits):
    top, mid, bottom = rank_and_partition(fits)
    assert sorted(top + mid + bottom) == list(range(len(fits)))
    assert (len(top), len(mid), len(bottom)) == partition_sizes(len(fits))
    assert min(fits[i] for i in top) >= max(fits[i] for i in bottom)


# --- hyper spaces -------------------------------------------------------------

def test_hyperdim_validation():
    with pytest.raises(ValueError):
        HyperDim("x", 1.0, 1.0)
    with pytest.raises(ValueError):
        HyperDim("x", 0.0, 1.0, "log")


def test_space_finish_resorts_pairs():
    out = DDPG.finish({"actor_lr": 1e-4, "critic_lr": 1e-4, "sigma_min": 0.09,
                       "sigma_max": 0.05})
    assert out["sigma_min"] <= out["sigma_max"]
    assert DDPG.contains(out)


def test_sample_respects_init_ranges():
    rng = np.random.default_rng(0)
    for _ in range(100):
        h = PPO.sample(rng, {"actor_std": (0.4, 0.45)})
        assert 0.4 <= h["actor_std"] <= 0.45
        assert PPO.contains(h)
    with pytest.raises(ValueError):
        PPO.sample(rng, {"nope": (0, 1)})


# --- perturb ------------------------------------------------------------------

def test_perturb_entropy_coeff_range():
    rng = np.random.default_rng(1)
    h = {"kl_threshold": 0.012, "entropy_coeff": 0.0005, "actor_std": 0.5}
    for _ in range(2000):
        out = mutate_perturb(h, PPO, 0.8, 1.2, rng)
        assert 0.0004 <= out["entropy_coeff"] <= 0.0006
    space = HyperSpace((HyperDim("entropy_coeff", 1e-5, 1e-2, "log"),))
    for _ in range(2000):
        v = mutate_perturb({"entropy_coeff": 0.001}, space, 0.8, 1.2, rng)["entropy_coeff"]
        assert 0.0008 <= v <= 0.0012


def test_perturb_clamps_at_upper_bound():
    rng = np.random.default_rng(2)
    h = {"kl_threshold": 0.016, "entropy_coeff": 0.001, "actor_std": 1.0}
    for _ in range(200):
        out = mutate_perturb(h, PPO, 1.05, 1.2, rng)
        assert out == {"kl_threshold": 0.016, "entropy_coeff": 0.001, "actor_std": 1.0}


def test_perturb_unit_factor_is_identity():
    h = {"kl_threshold": 0.01, "entropy_coeff": 0.0002, "actor_std": 0.7}
    assert mutate_perturb(h, PPO, 1.0, 1.0, np.random.default_rng(3)) == h


# --- resample -----------------------------------------------------------------

def test_resample_bounds_and_independence():
    rng = np.random.default_rng(4)
    h = {"kl_threshold": 0.016, "entropy_coeff": 0.001, "actor_std": 1.0}
    for _ in range(1000):
        out = mutate_resample(h, PPO, rng)
        assert 0.008 <= out["kl_threshold"] <= 0.016
        assert PPO.contains(out)


def test_resample_log_scale_mean():
    rng = np.random.default_rng(5)
    logs = [math.log10(mutate_resample({}, HYPER_SPACES["sac"], rng)["actor_lr"])
            for _ in range(4000)]
    assert min(logs) >= -4 and max(logs) <= -3
    assert abs(np.mean(logs) + 3.5) < 0.02


def test_resample_narrow_space():
    space = HyperSpace((HyperDim("x", 0.5, 0.5 + 1e-12),))
    rng = np.random.default_rng(6)
    for _ in range(100):
        assert 0.5 <= mutate_resample({"x": 0.5}, space, rng)["x"] <= 0.5 + 1e-12


# --- dexpbt -------------------------------------------------------------------

class ScriptedRng:
    def __init__(self, randoms, uniforms):
        self.randoms, self.uniforms = list(randoms), list(uniforms)

    def random(self):
        return self.randoms.pop(0)

    def uniform(self, lo, hi):
        return self.uniforms.pop(0)


def test_dexpbt_divide_branch():
    h = {"kl_threshold": 0.016, "entropy_coeff": 0.001, "actor_std": 0.5}
    # kl: mutate (0.1 < 0.5), divide (0.9 >= 0.5); others untouched (0.9)
    rng = ScriptedRng([0.1, 0.9, 0.9, 0.9], [1.25])
    out = mutate_dexpbt(h, PPO, 0.5, 1.1, 1.5, rng)
    assert out["kl_threshold"] == pytest.approx(0.0128, rel=1e-14)
    assert out["entropy_coeff"] == 0.001 and out["actor_std"] == 0.5


def test_dexpbt_beta_zero_is_identity():
    h = {"kl_threshold": 0.01, "entropy_coeff": 0.0003, "actor_std": 0.6}
    rng = np.random.default_rng(7)
    for _ in range(100):
        assert mutate_dexpbt(h, PPO, 0.0, 1.1, 1.5, rng) == h


def test_dexpbt_bad_beta():
    with pytest.raises(ValueError):
        mutate_dexpbt({}, PPO, 1.5, 1.1, 1.5, np.random.default_rng(0))


def test_mutate_dispatch():
    rng = np.random.default_rng(8)
    h = {"kl_threshold": 0.01, "entropy_coeff": 0.0003, "actor_std": 0.6}
    for scheme in ("perturb", "resample", "dexpbt"):
        assert PPO.contains(mutate(h, PPO, EvolutionConfig(mutation_scheme=scheme), rng))
    with pytest.raises(ValueError):
        mutate(h, PPO, EvolutionConfig(mutation_scheme="bogus"), rng)


def test_evolution_config_validation():
    with pytest.raises(ConfigError):
        EvolutionConfig(n_evo=0).validate()
    with pytest.raises(ConfigError):
        EvolutionConfig(mu_min=1.0).validate()
    with pytest.raises(ConfigError):
        EvolutionConfig(beta_mut=1.5).validate()


@settings(max_examples=200, deadline=None)
@given(st.sampled_from(["ppo", "sac", "ddpg", "surrogate"]),
       st.sampled_from(["perturb", "resample", "dexpbt"]), st.integers(0, 2 ** 32 - 1))
def test_mutation_closure(kind, scheme, seed):
    space = HYPER_SPACES[kind]
    rng = np.random.default_rng(seed)
    h = space.sample(rng)
    for _ in range(5):
        h = mutate(h, space, EvolutionConfig(mutation_scheme=scheme), rng)
        space.validate(h)


@settings(max_examples=50, deadline=None)
@given(st.sampled_from(["perturb", "resample", "dexpbt"]), st.integers(0, 2 ** 32 - 1))
def test_mutation_deterministic(scheme, seed):
    space = HYPER_SPACES["ddpg"]
    h = space.sample(np.random.default_rng(1))
    cfg = EvolutionConfig(mutation_scheme=scheme)
    a = mutate(h, space, cfg, np.random.default_rng(seed))
    b = mutate(h, space, cfg, np.random.default_rng(seed))
    assert a == b


# --- evolve_population ----------------------------------------------------------

SUR = HYPER_SPACES["surrogate"]


def test_evolve_n2():
    pop = PopulationState([Stub(0, [1.0]), Stub(1, [5.0])])
    events = evolve_population(pop, SUR, EvolutionConfig(), np.random.default_rng(0), 100)
    assert events[0]["top"] == [1] and events[0]["bottom"] == [0]
    assert np.array_equal(pop.agents[0].theta, pop.agents[1].theta)
    assert pop.agents[0].opt_step == 1
    assert pop.agents[0].replaced == 1
    assert pop.agents[0].last_event_fitness == 5.0
    assert all(a.fitness_window == [] for a in pop.agents)


def test_evolve_n1_noop():
    pop = PopulationState([Stub(0, [1.0])])
    events = evolve_population(pop, SUR, EvolutionConfig(), np.random.default_rng(0), 100)
    assert [e["type"] for e in events] == ["noop"]
    assert pop.agents[0].replaced == 0


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 20), st.integers(0, 2 ** 32 - 1))
def test_evolve_invariants(n, seed):
    rng = np.random.default_rng(seed)
    agents = [Stub(i, rng.normal(size=rng.integers(0, 4)), SUR.sample(rng)) for i in range(n)]
    pop = PopulationState(agents)
    before = [(a.theta.copy(), dict(a.hypers)) for a in agents]
    events = evolve_population(pop, SUR, EvolutionConfig(mutation_scheme="dexpbt"), rng, 10)
    summary = events[0]
    assert pop.size == n
    top = set(summary["top"])
    for i in summary["top"] + summary["mid"]:
        assert np.array_equal(pop.agents[i].theta, before[i][0])
        assert pop.agents[i].hypers == before[i][1]
    for rec in events[1:]:
        assert rec["parent_id"] in top
        assert np.array_equal(pop.agents[rec["child_id"]].theta, before[rec["parent_id"]][0])
        SUR.validate(pop.agents[rec["child_id"]].hypers)
    assert len(events) - 1 == len(summary["bottom"])
    assert pop.events[-len(events):] == [events[0]] + events[1:]
