"""Run configuration: dataclasses, shipped defaults and the TOML document format.

A config document has a ``[run]`` table, an optional ``[evolution]`` table,
one table named after the algorithm (``[ppo]``, ``[sac]``, ``[ddpg]`` or
``[surrogate]``) and an optional ``[hyper_init]`` table mapping hyperparameter
names to ``[low, high]`` initial sampling ranges (or a single pinned value).
Anything not given falls back to the defaults below.
"""
from __future__ import annotations

import dataclasses
import hashlib
import math
import re
from dataclasses import dataclass, field, fields

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .envpack import ENV_NAMES


class ConfigError(ValueError):
    """Invalid configuration; message names the key and, when known, the line."""


@dataclass
class PPOConfig:
    hidden_units: list = field(default_factory=lambda: [64, 64])
    activation: str = "tanh"
    horizon: int = 32
    epochs: int = 8
    minibatch_size: int = 64
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_eps: float = 0.2
    lr_init: float = 5e-4
    lr_gain: float = 1.5
    lr_min: float = 1e-6
    lr_max: float = 1e-2
    max_grad_norm: float = 1.0
    reward_scale: float = 1.0
    # baseline hyperparameter values (PBRL samples these from their ranges)
    kl_threshold: float = 0.016
    entropy_coeff: float = 0.001
    actor_std: float = 0.5


@dataclass
class SACConfig:
    hidden_units: list = field(default_factory=lambda: [64, 64])
    activation: str = "relu"
    horizon: int = 1
    batch_size: int = 256
    tau: float = 0.05
    gamma: float = 0.99
    n_step: int = 3
    replay_size: int = 100_000
    epochs: int = 4
    warmup: int = 1000
    max_grad_norm: float = 0.0
    reward_scale: float = 1.0
    alpha_lr: float = 3e-4
    init_alpha: float = 1.0
    actor_lr: float = 1e-4
    critic_lr: float = 1e-4
    target_entropy: float = -20.0


@dataclass
class DDPGConfig:
    hidden_units: list = field(default_factory=lambda: [64, 64])
    activation: str = "relu"
    horizon: int = 1
    batch_size: int = 256
    tau: float = 0.05
    gamma: float = 0.99
    n_step: int = 3
    replay_size: int = 100_000
    epochs: int = 4
    warmup: int = 1000
    max_grad_norm: float = 0.0
    reward_scale: float = 1.0
    actor_lr: float = 1e-4
    critic_lr: float = 1e-4
    sigma_min: float = 0.01
    sigma_max: float = 1.0


@dataclass
class SurrogateConfig:
    """Gradient ascent on the surrogate landscape; one env step is one ascent step."""

    horizon: int = 10
    ascent_lr: float = 0.01
    theta_init_low: float = 0.5
    theta_init_high: float = 1.0
    h1: float = 1.0
    h2: float = 1.0


ALGO_CONFIGS = {
    "ppo": PPOConfig,
    "sac": SACConfig,
    "ddpg": DDPGConfig,
    "surrogate": SurrogateConfig,
}


@dataclass
class EvolutionConfig:
    n_start: int = 200_000
    n_evo: int = 100_000
    perturb_factor_min: float = 0.8
    perturb_factor_max: float = 1.2
    beta_mut: float = 0.5
    mu_min: float = 1.1
    mu_max: float = 1.5
    mutation_scheme: str = "perturb"

    def validate(self):
        if self.n_start < 0:
            raise ConfigError("evolution.n_start must be >= 0")
        if self.n_evo <= 0:
            raise ConfigError("evolution.n_evo must be > 0")
        if not 0 < self.perturb_factor_min <= self.perturb_factor_max:
            raise ConfigError("evolution: need 0 < perturb_factor_min <= perturb_factor_max")
        if not 0.0 <= self.beta_mut <= 1.0:
            raise ConfigError("evolution.beta_mut must lie in [0, 1]")
        if not 1.0 < self.mu_min <= self.mu_max:
            raise ConfigError("evolution: need 1 < mu_min <= mu_max")
        if self.mutation_scheme not in ("perturb", "resample", "dexpbt"):
            raise ConfigError("evolution.mutation_scheme must be perturb, resample or dexpbt")


# Desk-scale evolution windows per environment (per-agent env steps).
ENV_EVOLUTION_DEFAULTS = {
    "pendulum": {"n_start": 20_000, "n_evo": 10_000},
    "pointmass": {"n_start": 20_000, "n_evo": 10_000},
    "surrogate": {"n_start": 200, "n_evo": 100},
}

ENV_ALGO_OVERRIDES = {
    ("pendulum", "ppo"): {"reward_scale": 0.1, "epochs": 10},
}


@dataclass
class RunConfig:
    algorithm: str = "ppo"
    env: str = "pendulum"
    population: int = 4
    envs_per_agent: int = 4
    total_steps: int = 100_000
    mode: str = "pbrl"
    seed: int | None = None
    out_dir: str | None = None
    deterministic: bool = True
    workers: int = 1
    checkpoint_every: int = 0
    evolution: EvolutionConfig = field(default_factory=EvolutionConfig)
    algo: object = None
    hyper_init: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.algo is None:
            self.algo = default_algo_config(self.algorithm, self.env)

    @property
    def learner_kind(self):
        return "surrogate" if self.env == "surrogate" else self.algorithm

    def validate(self):
        if self.env not in ENV_NAMES:
            raise ConfigError(f"run.env must be one of {list(ENV_NAMES)}, got {self.env!r}")
        if self.env == "surrogate":
            if self.algorithm != "surrogate":
                raise ConfigError("run.algorithm must be 'surrogate' when run.env is 'surrogate'")
        elif self.algorithm not in ("ppo", "sac", "ddpg"):
            raise ConfigError(f"run.algorithm must be ppo, sac or ddpg, got {self.algorithm!r}")
        if not isinstance(self.algo, ALGO_CONFIGS[self.algorithm]):
            raise ConfigError(f"algorithm block does not match run.algorithm {self.algorithm!r}")
        if self.population < 1:
            raise ConfigError("run.population must be >= 1")
        if self.envs_per_agent < 1:
            raise ConfigError("run.envs_per_agent must be >= 1")
        if self.total_steps < 0:
            raise ConfigError("run.total_steps must be >= 0")
        if self.mode not in ("pbrl", "baseline"):
            raise ConfigError("run.mode must be 'pbrl' or 'baseline'")
        if self.workers < 1:
            raise ConfigError("run.workers must be >= 1")
        if self.checkpoint_every < 0:
            raise ConfigError("run.checkpoint_every must be >= 0")
        self.evolution.validate()
        if self.mode == "pbrl" and self.total_steps < self.evolution.n_start:
            raise ConfigError("run.total_steps must be >= evolution.n_start in pbrl mode")
        if self.algo.horizon < 1:
            raise ConfigError(f"{self.algorithm}.horizon must be >= 1")
        for name, rng in self.hyper_init.items():
            lo, hi = rng
            if lo > hi:
                raise ConfigError(f"hyper_init.{name}: low {lo} > high {hi}")

    def steps_per_iteration(self):
        envs = 1 if self.env == "surrogate" else self.envs_per_agent
        return self.algo.horizon * envs

    def digest(self):
        """Hash of everything that influences results (not paths or worker count)."""
        doc = dataclasses.replace(self, out_dir=None, workers=1, deterministic=True)
        return hashlib.sha256(dumps(doc).encode()).hexdigest()


def default_algo_config(algorithm, env):
    try:
        cls = ALGO_CONFIGS[algorithm]
    except KeyError:
        raise ConfigError(f"unknown algorithm {algorithm!r}") from None
    overrides = ENV_ALGO_OVERRIDES.get((env, algorithm), {})
    return cls(**overrides)


def default_run_config(algorithm="ppo", env="pendulum", **kwargs):
    evo = EvolutionConfig(**ENV_EVOLUTION_DEFAULTS.get(env, {}))
    kwargs.setdefault("evolution", evo)
    return RunConfig(algorithm=algorithm, env=env, **kwargs)


# --- TOML document ------------------------------------------------------------

_RUN_KEYS = [f.name for f in fields(RunConfig) if f.name not in ("evolution", "algo", "hyper_init")]


def _format_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_format_value(x) for x in v) + "]"
    raise TypeError(f"cannot serialize {v!r}")


def dumps(cfg):
    lines = ["[run]"]
    for key in _RUN_KEYS:
        value = getattr(cfg, key)
        if value is not None:
            lines.append(f"{key} = {_format_value(value)}")
    lines += ["", "[evolution]"]
    for f in fields(EvolutionConfig):
        lines.append(f"{f.name} = {_format_value(getattr(cfg.evolution, f.name))}")
    lines += ["", f"[{cfg.algorithm}]"]
    for f in fields(cfg.algo):
        lines.append(f"{f.name} = {_format_value(getattr(cfg.algo, f.name))}")
    if cfg.hyper_init:
        lines += ["", "[hyper_init]"]
        for name, rng in cfg.hyper_init.items():
            lines.append(f"{name} = {_format_value([float(x) for x in rng])}")
    return "\n".join(lines) + "\n"


def _locate(text, section, key=None):
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        m = re.match(r"^\[\s*([A-Za-z0-9_.-]+)\s*\]", line)
        if m:
            current = m.group(1)
            if key is None and current == section:
                return lineno
            continue
        if key is not None and current == section and re.match(rf"^{re.escape(key)}\s*=", line):
            return lineno
    return None


def _err(text, section, key, message):
    lineno = _locate(text, section, key)
    where = f" (line {lineno})" if lineno else ""
    name = f"{section}.{key}" if key else section
    return ConfigError(f"{name}{where}: {message}")


def _coerce(text, section, key, value, default):
    expected = type(default)
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise _err(text, section, key, f"expected true/false, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise _err(text, section, key, f"expected an integer, got {value!r}")
        if isinstance(value, float):
            if not value.is_integer():
                raise _err(text, section, key, f"expected an integer, got {value!r}")
            value = int(value)
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise _err(text, section, key, f"expected a number, got {value!r}")
        return float(value)
    if isinstance(default, list):
        if not isinstance(value, list) or not all(isinstance(x, int) and not isinstance(x, bool)
                                                  for x in value):
            raise _err(text, section, key, f"expected a list of integers, got {value!r}")
        return list(value)
    if default is None or isinstance(default, str):
        if key in ("seed",):
            if isinstance(value, bool) or not isinstance(value, int):
                raise _err(text, section, key, f"expected an integer, got {value!r}")
            return value
        if not isinstance(value, str):
            raise _err(text, section, key, f"expected a string, got {value!r}")
        return value
    raise _err(text, section, key, f"unsupported type {expected.__name__}")


def _fill(cls_or_obj, table, text, section):
    obj = cls_or_obj() if isinstance(cls_or_obj, type) else cls_or_obj
    known = {f.name for f in fields(obj)}
    for key, value in table.items():
        if key not in known:
            raise _err(text, section, key, "unknown key")
        setattr(obj, key, _coerce(text, section, key, value, getattr(obj, key)))
    return obj


def loads(text):
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    allowed = {"run", "evolution", "hyper_init", *ALGO_CONFIGS}
    for section in doc:
        if section not in allowed:
            raise _err(text, section, None, "unknown section")
    run = doc.get("run", {})
    if not isinstance(run, dict):
        raise _err(text, "run", None, "must be a table")
    algorithm = run.get("algorithm", "ppo")
    env = run.get("env", "pendulum")
    if algorithm not in ALGO_CONFIGS:
        raise _err(text, "run", "algorithm", f"unknown algorithm {algorithm!r}")
    for section in ALGO_CONFIGS:
        if section in doc and section != algorithm:
            raise _err(text, section, None, f"does not match run.algorithm {algorithm!r}")
    cfg = default_run_config(algorithm, env)
    for key, value in run.items():
        if key not in _RUN_KEYS:
            raise _err(text, "run", key, "unknown key")
        default = getattr(cfg, key)
        if key == "out_dir":
            default = ""
        setattr(cfg, key, _coerce(text, "run", key, value, default))
    _fill(cfg.evolution, doc.get("evolution", {}), text, "evolution")
    _fill(cfg.algo, doc.get(algorithm, {}), text, algorithm)
    hyper_init = {}
    for name, value in doc.get("hyper_init", {}).items():
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            value = [value, value]
        if (not isinstance(value, list) or len(value) != 2
                or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in value)):
            raise _err(text, "hyper_init", name, "expected a number or [low, high]")
        hyper_init[name] = [float(value[0]), float(value[1])]
    cfg.hyper_init = hyper_init
    try:
        cfg.validate()
    except ConfigError as exc:
        key = str(exc).split(" ", 1)[0].rstrip(":")
        if "." in key:
            section, name = key.split(".", 1)
            lineno = _locate(text, section, name)
            if lineno:
                raise ConfigError(f"{exc} (line {lineno})") from None
        raise
    return cfg


def load(path):
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read())


def save(cfg, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(cfg))
