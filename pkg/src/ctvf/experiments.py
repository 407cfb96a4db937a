"""Policy evaluation and RL loops on the benchmark environments.

All randomness comes from ``RngStream(cfg.seed, stream_id)`` with fixed
stream ids, and no artifact contains timing information, so reruns with the
same config produce identical files.
"""

import csv
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, dump_config
from .ct_learners import ctgp_fit, ctkf_init, ctkf_update, sparsify
from .dt_learners import (
    DtDerivedKernel,
    dtkf_init,
    dtkf_update,
    gptd_transitions,
    sparsify_transitions,
)
from .kernels import DerivedKernel, GaussianKernel, PointDynamics
from .model import (
    ClosedLoop,
    Policy,
    Trajectory,
    energy_pumping_policy,
    mountain_car_env,
    pendulum_env,
    rollout,
    zero_policy,
)
from .numeric import RngStream
from .policy_opt import PolicyMetrics, certified_policy

log = logging.getLogger(__name__)

DATA_STREAM = 1_000_000
EVAL_STREAM = 2_000_000


def make_env(cfg: ExperimentConfig):
    if cfg.environment == "mountain_car":
        return mountain_car_env(
            noise_std=cfg.cost_std,
            max_control=cfg.max_abs_control,
            control_cost=cfg.control_cost_M,
            beta=cfg.discount_beta,
            barrier_gain=cfg.barrier_gain,
        )
    return pendulum_env(
        noise_std=cfg.cost_std,
        max_control=cfg.max_abs_control,
        control_cost=cfg.control_cost_M,
        beta=cfg.discount_beta,
        diffusion_scale=cfg.diffusion_scale,
        gravity=cfg.gravity,
        mass=cfg.mass,
        length=cfg.length,
        friction=cfg.friction,
    )


def initial_policy(cfg: ExperimentConfig):
    return energy_pumping_policy() if cfg.eval_policy == "energy_pumping" else zero_policy()


# -- state normalization ----------------------------------------------------


@dataclass(frozen=True)
class Scaling:
    """Affine map ``z = (x - center) / scale`` onto the learner's coordinates."""

    center: np.ndarray
    scale: np.ndarray

    @classmethod
    def for_env(cls, env, normalize=True):
        if not normalize:
            n = env.model.n_x
            return cls(np.zeros(n), np.ones(n))
        return cls(0.5 * (env.grid_high + env.grid_low), 0.5 * (env.grid_high - env.grid_low))

    def to_z(self, X):
        return (np.asarray(X, dtype=float) - self.center) / self.scale

    def to_x(self, Z):
        return np.asarray(Z, dtype=float) * self.scale + self.center


@dataclass(frozen=True)
class ScaledClosedLoop:
    """The closed loop seen in normalized coordinates (drift and diffusion rescaled)."""

    inner: ClosedLoop
    scaling: Scaling

    def drift(self, z):
        return self.inner.drift(self.scaling.to_x(z)) / self.scaling.scale

    def diffusion_matrix(self, z):
        s = self.scaling.scale
        return self.inner.diffusion_matrix(self.scaling.to_x(z)) / np.outer(s, s)


# -- learners -----------------------------------------------------------------


@dataclass
class ValueModel:
    """A fitted value estimate in state coordinates, whatever the learner."""

    learner: str
    scaling: Scaling
    mean_fn: object
    grad_fn: object
    size: int
    doc: dict
    has_variance: bool = True
    offset: float = 0.0  # constant prior mean of the value

    def value(self, X):
        m, v = self.mean_fn(self.scaling.to_z(np.atleast_2d(X)))
        return m + self.offset, (v if self.has_variance else np.full(len(m), np.nan))

    def gradient(self, x):
        return self.grad_fn(self.scaling.to_z(x)) / self.scaling.scale


def _ct_samples(trajs, scaling):
    X = np.vstack([t.x for t in trajs])
    d = np.concatenate([t.cost for t in trajs])
    return scaling.to_z(X), d


def _dt_transitions(trajs, cfg: ExperimentConfig, scaling):
    X, Xn, d = [], [], []
    for t in trajs:
        s = t.with_dt(cfg.control_cycle).subsample(cfg.dt_stride)
        if len(s) < 2:
            continue
        X.append(s.x[:-1])
        Xn.append(s.x[1:])
        d.append(s.cost[:-1] * cfg.time_interval)
    if not X:
        raise ValueError("no DT transitions: episodes shorter than the time interval")
    return scaling.to_z(np.vstack(X)), scaling.to_z(np.vstack(Xn)), np.concatenate(d)


def fit_value(cfg: ExperimentConfig, env, policy, trajs, scaling):
    """Fit the configured learner to trajectories collected under ``policy``.

    A constant cost prior mean ``m`` is handled by fitting ``d - m``: the
    generator maps the constant value ``m / beta`` to ``m``, so the value
    estimate is that constant plus the usual kernel expansion.
    """
    model = _fit_value(cfg, env, policy, trajs, scaling)
    model.offset = cfg.value_prior_mean
    model.doc["value_offset"] = model.offset
    return model


def _fit_value(cfg, env, policy, trajs, scaling):
    base = GaussianKernel(cfg.kernel_sigma, env.model.n_x)
    extra = {"learner": cfg.learner, "state_center": scaling.center.tolist(), "state_scale": scaling.scale.tolist()}
    if cfg.continuous_time:
        cl = ScaledClosedLoop(ClosedLoop(env.model, policy), scaling)
        dk = DerivedKernel(base, cl, cfg.discount_beta)
        Z, d = _ct_samples(trajs, scaling)
        d = d - cfg.cost_prior_mean
        dyn = dk.dynamics(Z)
        if cfg.learner == "ctgp":
            keep = sparsify(dk, Z, cfg.coherence_threshold, dyn)
            gp = ctgp_fit(dk, Z[keep], d[keep], cfg.cost_std, dyn.take(keep))
            doc = gp.dictionary(cfg.coherence_threshold).to_dict(**extra)
            return ValueModel(cfg.learner, scaling, gp.value, gp.gradient, len(gp), doc)
        kf = ctkf_init(dk, cfg.step_size, cfg.coherence_threshold)
        for m in range(len(Z)):
            ctkf_update(kf, dk, Z[m], d[m], dyn.take([m]))
        D = kf.dictionary
        return ValueModel(
            cfg.learner, scaling, lambda Q: (D.value(Q), None), D.gradient, len(D), D.to_dict(**extra), False
        )
    Z, Zn, d = _dt_transitions(trajs, cfg, scaling)
    d = d - cfg.cost_prior_mean * cfg.time_interval
    if cfg.learner == "gptd":
        dtk = DtDerivedKernel(base, cfg.discount_gamma)
        keep = sparsify_transitions(dtk, Z, Zn, cfg.coherence_threshold)
        S = cfg.dt_cost_std**2 * np.eye(len(keep))
        post = gptd_transitions(dtk, Z[keep], Zn[keep], d[keep], S)
        return ValueModel(cfg.learner, scaling, post.value, post.gradient, len(keep), dict(post.to_dict(), **extra))
    st = dtkf_init(base, cfg.step_size, cfg.discount_gamma, cfg.coherence_threshold, normalized=True)
    for m in range(len(Z)):
        dtkf_update(st, Z[m], Zn[m], d[m])
    V = st.value
    return ValueModel(cfg.learner, scaling, lambda Q: (V.value(Q), None), V.gradient, len(V), V.to_dict(**extra), False)


# -- data collection and evaluation ------------------------------------------


def collect_episodes(cfg, env, policy, n, stream_base):
    cl = ClosedLoop(env.model, policy)
    out = []
    for e in range(n):
        rng = RngStream(cfg.seed, stream_base + e)
        x0 = env.initial_state(rng)
        out.append(
            rollout(cl, env.cost, x0, cfg.control_cycle, cfg.episode_horizon, env.stop, rng, cfg.substeps)
        )
    return out


def collect_for_time(cfg, env, policy, duration, stream_base):
    """Trajectories of total length ``duration``, restarting after each termination."""
    cl = ClosedLoop(env.model, policy)
    out, left, e = [], int(round(duration / cfg.control_cycle)), 0
    while left > 0:
        rng = RngStream(cfg.seed, stream_base + e)
        x0 = env.initial_state(rng)
        tr = rollout(cl, env.cost, x0, cfg.control_cycle, left * cfg.control_cycle, env.stop, rng, cfg.substeps)
        out.append(tr)
        left -= max(tr.n_transitions, 1)
        e += 1
    return out


def collect_data(cfg, env, policy, phase):
    base = DATA_STREAM + 1000 * phase
    if cfg.learning_time_per_update > 0:
        return collect_for_time(cfg, env, policy, cfg.learning_time_per_update, base)
    return collect_episodes(cfg, env, policy, cfg.episodes_per_phase, base)


def violations(env, traj: Trajectory):
    if env.barrier is None:
        return 0
    return int(sum(env.barrier.b(x) < 0 for x in traj.x))


def duration(traj: Trajectory):
    """Time until termination (or the horizon); the up-time for the pendulum."""
    return float(traj.t[-1])


@dataclass
class MetricsRecord:
    phase: str
    update: int
    episode: int
    policy: str
    cumulative_cost: float
    violations: int
    duration: float
    dictionary_size: int = 0
    barrier_activations: int = 0
    infeasible_events: int = 0
    min_width: float = math.inf

    HEADER = (
        "phase",
        "update",
        "episode",
        "policy",
        "cumulative_cost",
        "violations",
        "duration",
        "dictionary_size",
        "barrier_activations",
        "infeasible_events",
        "min_width",
    )

    def row(self):
        return [getattr(self, k) if not isinstance(getattr(self, k), float) else repr(getattr(self, k)) for k in self.HEADER]


def write_metrics(path, records):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(MetricsRecord.HEADER)
        for r in records:
            w.writerow(r.row())


def value_grid(model: ValueModel, env, resolution):
    g1 = np.linspace(env.grid_low[0], env.grid_high[0], resolution)
    g2 = np.linspace(env.grid_low[1], env.grid_high[1], resolution)
    X = np.array([[a, b] for a in g1 for b in g2])
    mean, var = model.value(X)
    return X, mean, var


def write_grid(path, X, mean, var):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x1", "x2", "mean", "variance"])
        for x, m, v in zip(X, mean, var):
            w.writerow([repr(float(x[0])), repr(float(x[1])), repr(float(m)), repr(float(v))])


def evaluate_policy(cfg, env, policy, phase, update, size=0, cp=None):
    """``episodes_per_phase`` episodes with common random numbers across updates.

    ``cp`` (the certified policy behind ``policy``) supplies per-episode QP metrics.
    """
    trajs, recs = [], []
    for e in range(cfg.episodes_per_phase):
        if cp is not None:
            cp.metrics = PolicyMetrics()
        (tr,) = collect_episodes(cfg, env, policy, 1, EVAL_STREAM + e)
        m = cp.metrics if cp is not None else PolicyMetrics()
        trajs.append(tr)
        recs.append(
            MetricsRecord(
                phase,
                update,
                e,
                policy.tag,
                tr.cumulative_cost(cfg.control_cycle),
                violations(env, tr),
                duration(tr),
                size,
                m.barrier_activations,
                m.infeasible_events,
                m.min_width,
            )
        )
    return trajs, recs


def greedy_policy(cfg, env, model: ValueModel, barrier):
    cp = certified_policy(env, model, barrier=barrier and env.barrier is not None)
    return Policy(cp, "certified-greedy" if cp.barrier is not None else "greedy", f"greedy w.r.t. {model.learner}"), cp


def _prepare(out_dir, cfg):
    out = Path(out_dir if out_dir is not None else cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(dump_config(cfg))
    return out


def _dump_doc(path, doc):
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)


@dataclass
class EvaluationResult:
    model: ValueModel
    data: list
    records: list = field(default_factory=list)
    out_dir: Path = None


def run_policy_evaluation(cfg: ExperimentConfig, out_dir=None, update_policy=True):
    """Learn the value of the evaluation policy, export it, then test the greedy update."""
    t0 = time.perf_counter()
    out = _prepare(out_dir, cfg)
    env = make_env(cfg)
    scaling = Scaling.for_env(env, cfg.normalize_state)
    policy = initial_policy(cfg)
    data = collect_episodes(cfg, env, policy, cfg.episodes_per_phase, DATA_STREAM)
    records = [
        MetricsRecord("data", 0, e, policy.tag, tr.cumulative_cost(cfg.control_cycle), violations(env, tr), duration(tr))
        for e, tr in enumerate(data)
    ]
    for e, tr in enumerate(data):
        tr.with_dt(cfg.time_interval).to_csv(out / f"data_traj_{e}.csv")
    model = fit_value(cfg, env, policy, data, scaling)
    write_grid(out / "value_grid.csv", *value_grid(model, env, cfg.grid_resolution))
    _dump_doc(out / "dictionary.json", model.doc)
    if update_policy:
        new, cp = greedy_policy(cfg, env, model, cfg.barrier)
        trajs, recs = evaluate_policy(cfg, env, new, "updated", 1, model.size, cp)
        records += recs
        for e, tr in enumerate(trajs):
            tr.to_csv(out / f"eval_traj_{e}.csv")
    write_metrics(out / "metrics.csv", records)
    (out / "provenance.txt").write_text(
        f"evaluation_policy = {policy.tag}: {policy.description}\nlearner = {cfg.learner}\n"
    )
    log.info("policy evaluation finished in %.2f s", time.perf_counter() - t0)
    return EvaluationResult(model, data, records, out)


def run_rl_loop(cfg: ExperimentConfig, out_dir=None):
    """Alternate data collection, value fitting and greedy updates.

    Returns the evaluation records, grouped by update index (0 = initial policy).
    """
    t0 = time.perf_counter()
    out = _prepare(out_dir, cfg)
    env = make_env(cfg)
    scaling = Scaling.for_env(env, cfg.normalize_state)
    policy = initial_policy(cfg)
    _, recs = evaluate_policy(cfg, env, policy, "eval", 0)
    history = [recs]
    for k in range(1, cfg.policy_updates + 1):
        data = collect_data(cfg, env, policy, k)
        model = fit_value(cfg, env, policy, data, scaling)
        _dump_doc(out / f"dictionary_{k}.json", model.doc)
        policy, cp = greedy_policy(cfg, env, model, cfg.barrier)
        _, recs = evaluate_policy(cfg, env, policy, "eval", k, model.size, cp)
        history.append(recs)
        log.info("update %d: mean duration %.3f", k, np.mean([r.duration for r in recs]))
    write_metrics(out / "metrics.csv", [r for h in history for r in h])
    log.info("rl loop finished in %.2f s", time.perf_counter() - t0)
    return history


def mean_duration(records):
    return float(np.mean([r.duration for r in records]))
