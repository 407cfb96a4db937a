"""Plain-text ``key = value`` experiment configuration.

Blank lines and ``#`` comments are ignored. Unknown keys are rejected,
``seed`` is required, and everything else falls back to the defaults below.
"""

import math
from dataclasses import dataclass, fields, replace
from pathlib import Path

ENVIRONMENTS = ("mountain_car", "pendulum")
CT_LEARNERS = ("ctgp", "ctkf")
DT_LEARNERS = ("gptd", "dtkf")
EVAL_POLICIES = ("energy_pumping", "zero")


class ParseError(ValueError):
    def __init__(self, line, msg):
        super().__init__(f"line {line}: {msg}")
        self.line = line


class ValidationError(ValueError):
    def __init__(self, field, msg):
        super().__init__(f"{field}: {msg}")
        self.field = field


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int
    environment: str = "mountain_car"
    learner: str = "ctgp"
    # learner and model parameters
    coherence_threshold: float = 0.7
    kernel_sigma: float = 0.2
    normalize_state: bool = True
    max_abs_control: float = 1.0
    control_cycle: float = 1.0
    time_interval: float = 1.0  # DT sampling interval; metadata for CT learners
    discount_beta: float = 0.0
    discount_gamma: float = 1.0
    cost_std: float = 0.1
    cost_prior_mean: float = 0.0  # constant GP prior mean of the cost (value mean m / beta)
    dt_cost_std_power: float = 2.0  # DT noise std = cost_std * time_interval**power
    control_cost_M: float = 0.002
    diffusion_scale: float = 0.0
    step_size: float = 1.8
    gravity: float = 9.8
    mass: float = 1.0
    length: float = 1.0
    friction: float = 0.01
    # harness
    integrator_step: float = 1.0
    episode_horizon: float = 300.0
    episodes_per_phase: int = 5
    learning_time_per_update: float = 0.0  # > 0: restart-based collection of this duration
    policy_updates: int = 1
    barrier: bool = True
    barrier_gain: float = 1.0
    eval_policy: str = "energy_pumping"
    grid_resolution: int = 50
    output_dir: str = "out"

    def __post_init__(self):
        validate(self)

    @property
    def continuous_time(self):
        return self.learner in CT_LEARNERS

    @property
    def substeps(self):
        return int(round(self.control_cycle / self.integrator_step))

    @property
    def dt_stride(self):
        return int(round(self.time_interval / self.control_cycle))

    @property
    def value_prior_mean(self):
        """Constant value whose image under the generator is the cost prior mean."""
        if self.cost_prior_mean == 0.0:
            return 0.0
        if self.continuous_time:
            return self.cost_prior_mean / self.discount_beta
        return self.cost_prior_mean * self.time_interval / (1.0 - self.discount_gamma)

    @property
    def dt_cost_std(self):
        return self.cost_std * self.time_interval**self.dt_cost_std_power


def _positive(cfg, *names):
    for n in names:
        v = getattr(cfg, n)
        if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
            raise ValidationError(n, f"must be positive, got {v!r}")


def _nonneg(cfg, *names):
    for n in names:
        v = getattr(cfg, n)
        if not (math.isfinite(v) and v >= 0):
            raise ValidationError(n, f"must be nonnegative, got {v!r}")


def _multiple(cfg, name, big, small):
    k = big / small
    if abs(k - round(k)) > 1e-9 or round(k) < 1:
        raise ValidationError(name, f"{big} is not a positive multiple of {small}")


def validate(cfg: ExperimentConfig):
    if cfg.environment not in ENVIRONMENTS:
        raise ValidationError("environment", f"unknown environment {cfg.environment!r}")
    if cfg.learner not in CT_LEARNERS + DT_LEARNERS:
        raise ValidationError("learner", f"unknown learner {cfg.learner!r}")
    if cfg.eval_policy not in EVAL_POLICIES:
        raise ValidationError("eval_policy", f"unknown policy {cfg.eval_policy!r}")
    _positive(
        cfg,
        "kernel_sigma",
        "max_abs_control",
        "control_cycle",
        "time_interval",
        "control_cost_M",
        "step_size",
        "integrator_step",
        "episode_horizon",
        "barrier_gain",
        "gravity",
        "mass",
        "length",
    )
    _nonneg(cfg, "discount_beta", "cost_std", "diffusion_scale", "friction", "learning_time_per_update", "dt_cost_std_power")
    if not 0 < cfg.coherence_threshold <= 1:
        raise ValidationError("coherence_threshold", "must lie in (0, 1]")
    if not 0 <= cfg.discount_gamma <= 1:
        raise ValidationError("discount_gamma", "must lie in [0, 1]")
    if cfg.continuous_time and cfg.discount_gamma != 1.0 and cfg.discount_beta == 0.0:
        raise ValidationError("discount_gamma", "CT learners take discount_beta, not discount_gamma")
    if not cfg.continuous_time and cfg.discount_beta != 0.0 and cfg.discount_gamma == 1.0:
        raise ValidationError("discount_beta", "DT learners take discount_gamma, not discount_beta")
    if cfg.cost_prior_mean != 0.0:
        if cfg.continuous_time and cfg.discount_beta == 0.0:
            raise ValidationError("cost_prior_mean", "a nonzero prior mean needs discount_beta > 0")
        if not cfg.continuous_time and cfg.discount_gamma == 1.0:
            raise ValidationError("cost_prior_mean", "a nonzero prior mean needs discount_gamma < 1")
    for n in ("episodes_per_phase", "grid_resolution"):
        if getattr(cfg, n) < 1:
            raise ValidationError(n, "must be >= 1")
    if cfg.grid_resolution < 2:
        raise ValidationError("grid_resolution", "must be >= 2")
    if cfg.policy_updates < 0:
        raise ValidationError("policy_updates", "must be >= 0")
    _multiple(cfg, "control_cycle", cfg.control_cycle, cfg.integrator_step)
    _multiple(cfg, "time_interval", cfg.time_interval, cfg.control_cycle)
    _multiple(cfg, "episode_horizon", cfg.episode_horizon, cfg.control_cycle)
    if not isinstance(cfg.seed, int) or cfg.seed < 0:
        raise ValidationError("seed", f"must be a nonnegative integer, got {cfg.seed!r}")


_FIELDS = {f.name: f for f in fields(ExperimentConfig)}


def _convert(name, text, line):
    kind = _FIELDS[name].type
    try:
        if kind in (bool, "bool"):
            if text.lower() in ("true", "yes", "on", "1"):
                return True
            if text.lower() in ("false", "no", "off", "0"):
                return False
            raise ValueError(text)
        if kind in (int, "int"):
            return int(text)
        if kind in (float, "float"):
            return float(text)
    except ValueError:
        raise ParseError(line, f"bad value {text!r} for {name}") from None
    return text


def parse_config(text, **overrides):
    values = {}
    for no, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(no, f"expected 'key = value', got {raw.strip()!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in _FIELDS:
            raise ParseError(no, f"unknown key {key!r}")
        if key in values:
            raise ParseError(no, f"duplicate key {key!r}")
        values[key] = _convert(key, val, no)
    values.update({k: v for k, v in overrides.items() if v is not None})
    if "seed" not in values:
        raise ValidationError("seed", "missing")
    return ExperimentConfig(**values)


def load_config(path, **overrides):
    return parse_config(Path(path).read_text(), **overrides)


def dump_config(cfg: ExperimentConfig):
    lines = []
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        lines.append(f"{f.name} = {str(v).lower() if isinstance(v, bool) else repr(v) if isinstance(v, float) else v}")
    return "\n".join(lines) + "\n"


def with_overrides(cfg: ExperimentConfig, **kw):
    return replace(cfg, **{k: v for k, v in kw.items() if v is not None})
