"""SDE models, cost models, the two benchmark environments and simulation."""

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from scipy.special import expit

from .numeric import RngStream
from .policy_opt import BarrierSpec


class NonFinite(FloatingPointError):
    pass


@dataclass(frozen=True)
class SdeModel:
    """``dx = h(x, u) dt + eta(x, u) dw`` on a box domain with a box control set.

    ``f``/``g`` are given when the drift is control affine,
    ``h(x, u) = f(x) + g(x) u``.
    """

    n_x: int
    n_u: int
    n_w: int
    drift: Callable
    diffusion: Callable
    u_low: np.ndarray
    u_high: np.ndarray
    x_low: Optional[np.ndarray] = None
    x_high: Optional[np.ndarray] = None
    f: Optional[Callable] = None
    g: Optional[Callable] = None
    diagonal_A: bool = True
    name: str = "sde"

    @property
    def control_affine(self):
        return self.f is not None and self.g is not None

    def clip_state(self, x):
        if self.x_low is None:
            return np.asarray(x, dtype=float)
        return np.clip(x, self.x_low, self.x_high)

    def clip_control(self, u):
        return np.clip(u, self.u_low, self.u_high)

    def diffusion_free(self, x, u):
        return not np.any(self.diffusion(x, u))


@dataclass(frozen=True)
class Policy:
    fn: Callable
    tag: str = "hand-coded"
    description: str = ""

    def __call__(self, x):
        return np.atleast_1d(np.asarray(self.fn(x), dtype=float))


def zero_policy(n_u=1):
    return Policy(lambda x: np.zeros(n_u), "hand-coded", "u = 0")


def energy_pumping_policy():
    """Mountain Car evaluation policy: push along the velocity, u = 1 at rest."""
    return Policy(
        lambda x: np.array([1.0 if x[1] >= 0.0 else -1.0]),
        "hand-coded",
        "energy pumping u = sign(vel), u = 1 at vel = 0",
    )


def linear_policy(gain):
    gain = np.atleast_2d(np.asarray(gain, dtype=float))
    return Policy(lambda x: -gain @ x, "hand-coded", f"u = -F x, F = {gain.tolist()}")


@dataclass(frozen=True)
class ClosedLoop:
    model: SdeModel
    policy: Policy

    def control(self, x):
        return self.model.clip_control(self.policy(x))

    def drift(self, x):
        x = np.asarray(x, dtype=float)
        return np.asarray(self.model.drift(x, self.control(x)), dtype=float)

    def diffusion(self, x):
        x = np.asarray(x, dtype=float)
        return np.atleast_2d(np.asarray(self.model.diffusion(x, self.control(x)), dtype=float))

    def diffusion_matrix(self, x):
        eta = self.diffusion(x)
        return eta @ eta.T

    def diffusion_diag(self, x):
        return np.diag(self.diffusion_matrix(x)).copy()


@dataclass(frozen=True)
class CostModel:
    """``R(x, u) = Q(x) + 0.5 u^T M u`` observed with additive N(0, noise_std^2)."""

    state_cost: Callable
    M: np.ndarray
    beta: float = 0.0
    noise_std: float = 0.0

    def __post_init__(self):
        m = np.atleast_2d(np.asarray(self.M, dtype=float))
        if not np.allclose(m, m.T) or np.any(np.linalg.eigvalsh(m) <= 0):
            raise ValueError("control weight M must be symmetric positive definite")
        if self.beta < 0 or self.noise_std < 0:
            raise ValueError("beta and noise_std must be nonnegative")
        object.__setattr__(self, "M", m)

    def cost(self, x, u):
        u = np.atleast_1d(u)
        return float(self.state_cost(np.asarray(x, dtype=float)) + 0.5 * u @ self.M @ u)


def observe_cost(cm: CostModel, x, u, rng: RngStream):
    return cm.cost(x, u) + cm.noise_std * float(rng.normal(1)[0])


@dataclass(frozen=True)
class Environment:
    name: str
    model: SdeModel
    cost: CostModel
    barrier: Optional[BarrierSpec]
    initial_state: Callable  # rng -> x0
    stop: Callable  # x -> bool
    grid_low: np.ndarray
    grid_high: np.ndarray
    labels: tuple = ("x1", "x2")


def mountain_car_env(noise_std=0.1, max_control=1.0, control_cost=0.002, beta=0.0, barrier_gain=1.0):
    """Continuous Mountain Car with position/velocity clipping and a velocity barrier."""

    def drift(x, u):
        return np.array([x[1], -0.0025 * math.cos(3.0 * x[0]) + 0.0015 * float(u[0])])

    def f(x):
        return np.array([x[1], -0.0025 * math.cos(3.0 * x[0])])

    def g(x):
        return np.array([[0.0], [0.0015]])

    model = SdeModel(
        n_x=2,
        n_u=1,
        n_w=2,
        drift=drift,
        diffusion=lambda x, u: np.zeros((2, 2)),
        u_low=np.array([-max_control]),
        u_high=np.array([max_control]),
        x_low=np.array([-1.2, -0.07]),
        x_high=np.array([0.6, 0.07]),
        f=f,
        g=g,
        name="mountain_car",
    )
    cost = CostModel(
        state_cost=lambda x: 1.0 if x[0] < 0.45 else 0.0,
        M=np.array([[control_cost]]),
        beta=beta,
        noise_std=noise_std,
    )
    barrier = BarrierSpec(
        b=lambda x: 0.05 + x[1],
        grad_b=lambda x: np.array([0.0, 1.0]),
        gain=barrier_gain,
    )
    return Environment(
        name="mountain_car",
        model=model,
        cost=cost,
        barrier=barrier,
        initial_state=lambda rng: np.array([rng.uniform(-0.6, -0.4), 0.0]),
        stop=lambda x: x[0] >= 0.45,
        grid_low=model.x_low,
        grid_high=model.x_high,
        labels=("position", "velocity"),
    )


def pendulum_cost(x):
    # sigmoids taken on |theta| so that the cost is symmetric about upright
    th = abs(x[0])
    return float(expit(10.0 * (th - math.pi / 16)) + 100.0 * expit(10.0 * (th - math.pi / 6)))


def pendulum_env(
    noise_std=0.1,
    max_control=6.0,
    control_cost=0.1,
    beta=0.01,
    diffusion_scale=0.01,
    gravity=9.8,
    mass=1.0,
    length=1.0,
    friction=0.01,
):
    """Inverted pendulum, upright at theta = 0, with additive Brownian forcing."""
    inertia = mass * length**2

    def f(x):
        return np.array([x[1], gravity / length * math.sin(x[0]) - friction / inertia * x[1]])

    def g(x):
        return np.array([[0.0], [1.0 / inertia]])

    eta = diffusion_scale * np.eye(2)
    model = SdeModel(
        n_x=2,
        n_u=1,
        n_w=2,
        drift=lambda x, u: f(x) + g(x) @ np.atleast_1d(u),
        diffusion=lambda x, u: eta,
        u_low=np.array([-max_control]),
        u_high=np.array([max_control]),
        f=f,
        g=g,
        name="pendulum",
    )
    cost = CostModel(pendulum_cost, np.array([[control_cost]]), beta=beta, noise_std=noise_std)
    return Environment(
        name="pendulum",
        model=model,
        cost=cost,
        barrier=None,
        initial_state=lambda rng: np.array([rng.uniform(-math.pi / 6, math.pi / 6), 0.0]),
        stop=lambda x: abs(x[0]) > math.pi / 4,
        grid_low=np.array([-math.pi / 4, -math.pi]),
        grid_high=np.array([math.pi / 4, math.pi]),
        labels=("theta", "omega"),
    )


def euler_maruyama_step(cl: ClosedLoop, x, dt, rng: RngStream, u=None):
    """One Euler-Maruyama step of the closed loop, followed by domain clipping.

    ``u`` overrides the policy output (zero-order hold across substeps).
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    x = np.asarray(x, dtype=float)
    model = cl.model
    if u is None:
        u = cl.control(x)
    eps = rng.normal(model.n_w)
    x_new = x + np.asarray(model.drift(x, u)) * dt + math.sqrt(dt) * (np.atleast_2d(model.diffusion(x, u)) @ eps)
    if not np.all(np.isfinite(x_new)):
        raise NonFinite(f"non-finite state after step from {x}")
    return model.clip_state(x_new)


@dataclass
class Trajectory:
    """Samples ``(t, x, u, observed cost)`` at every control instant.

    ``dt`` is metadata only (the control cycle used to collect the data).
    """

    t: np.ndarray
    x: np.ndarray
    u: np.ndarray
    cost: np.ndarray
    dt: float
    terminated: bool = False

    def __len__(self):
        return len(self.t)

    @property
    def n_transitions(self):
        return len(self.t) - 1

    def with_dt(self, dt):
        return replace(self, dt=dt)

    def subsample(self, every):
        idx = np.arange(0, len(self.t), every)
        return Trajectory(self.t[idx], self.x[idx], self.u[idx], self.cost[idx], self.dt * every, self.terminated)

    def cumulative_cost(self, cycle=None):
        """Sum of observed cost times the control cycle over all transitions."""
        cycle = self.dt if cycle is None else cycle
        return float(np.sum(self.cost[:-1]) * cycle)

    def to_csv(self, path):
        n_x, n_u = self.x.shape[1], self.u.shape[1]
        header = ["t"] + [f"x{i + 1}" for i in range(n_x)] + [f"u{i + 1}" for i in range(n_u)] + ["cost"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for k in range(len(self.t)):
                row = [self.t[k], *self.x[k], *self.u[k], self.cost[k]]
                w.writerow([repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path, dt):
        with open(path) as fh:
            rows = list(csv.reader(fh))
        header, data = rows[0], np.array([[float(v) for v in r] for r in rows[1:]])
        n_x = sum(h.startswith("x") for h in header)
        n_u = sum(h.startswith("u") for h in header)
        return cls(data[:, 0], data[:, 1 : 1 + n_x], data[:, 1 + n_x : 1 + n_x + n_u], data[:, -1], dt)


def rollout(cl: ClosedLoop, cm: CostModel, x0, dt, horizon, stop=None, rng=None, substeps=1, control_fn=None):
    """Simulate the closed loop, observing the cost at every control instant.

    ``dt`` is the control cycle; the integrator takes ``substeps`` steps per
    cycle with the control held. The state that triggers ``stop`` is recorded
    as the final sample.
    """
    if not dt > 0 or horizon < dt * (1 - 1e-12):
        raise ValueError("need dt > 0 and horizon >= dt")
    rng = RngStream(0) if rng is None else rng
    control_fn = cl.control if control_fn is None else control_fn
    n_steps = int(round(horizon / dt))
    h = dt / substeps
    x = cl.model.clip_state(np.asarray(x0, dtype=float))
    ts, xs, us, cs = [], [], [], []
    terminated = False
    for k in range(n_steps + 1):
        u = np.atleast_1d(cl.model.clip_control(control_fn(x)))
        ts.append(k * dt)
        xs.append(x)
        us.append(u)
        cs.append(observe_cost(cm, x, u, rng))
        if stop is not None and stop(x):
            terminated = True
            break
        if k == n_steps:
            break
        for _ in range(substeps):
            x = euler_maruyama_step(cl, x, h, rng, u=u)
    return Trajectory(np.array(ts), np.array(xs), np.array(us), np.array(cs), dt, terminated)
