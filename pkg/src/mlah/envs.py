"""Native continuous-control environments.

Both environments are plain-float state machines: ``reset`` draws an initial
observation from a numpy ``Generator`` and ``step`` is deterministic given the
action, so a (seed, action sequence) pair reproduces a trajectory bit for bit.

Rewards are computed from the true state only. Observation attacks live in
:mod:`mlah.adversary` and never see this module's reward path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

KINDS = ("cartpole_continuous", "mountaincar_continuous")


@dataclass(frozen=True)
class EnvSpec:
    kind: str = "cartpole_continuous"
    max_episode_steps: int = 1000
    # cart-pole
    gravity: float = 9.8
    cart_mass: float = 1.0
    pole_mass: float = 0.1
    pole_half_length: float = 0.5
    force_scale: float = 10.0
    dt: float = 0.02
    theta_limit: float = 0.2
    x_limit: float = 2.4
    # mountain car
    power: float = 0.0015
    hill_gain: float = 0.0025
    max_speed: float = 0.07
    min_position: float = -1.2
    max_position: float = 0.6
    goal_position: float = 0.45
    goal_reward: float = 100.0
    action_cost: float = 0.1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown environment kind {self.kind!r}")
        if self.max_episode_steps <= 0:
            raise ValueError("max_episode_steps must be positive")
        for name in ("gravity", "cart_mass", "pole_mass", "pole_half_length",
                     "force_scale", "dt", "theta_limit", "x_limit", "power",
                     "hill_gain", "max_speed"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be finite and positive")

    @property
    def obs_dim(self) -> int:
        return 4 if self.kind == "cartpole_continuous" else 2

    @property
    def act_dim(self) -> int:
        return 1

    @property
    def max_return(self) -> float:
        """Upper bound used as the default normalization constant."""
        if self.kind == "cartpole_continuous":
            return float(self.max_episode_steps)
        return self.goal_reward


def cartpole(**kw) -> EnvSpec:
    return EnvSpec(kind="cartpole_continuous", **kw)


def mountaincar(**kw) -> EnvSpec:
    kw.setdefault("max_episode_steps", 999)
    return EnvSpec(kind="mountaincar_continuous", **kw)


def make_spec(kind: str, **kw) -> EnvSpec:
    if kind == "mountaincar_continuous":
        return mountaincar(**kw)
    return EnvSpec(kind=kind, **kw)


@dataclass(frozen=True)
class EnvState:
    observation: tuple
    step_index: int = 0
    terminated: bool = False

    def obs_array(self) -> np.ndarray:
        return np.array(self.observation, dtype=np.float64)


class EnvError(RuntimeError):
    pass


def reset(spec: EnvSpec, rng: np.random.Generator) -> EnvState:
    if spec.kind == "cartpole_continuous":
        obs = tuple(float(v) for v in rng.uniform(-0.05, 0.05, size=4))
    else:
        obs = (float(rng.uniform(-0.6, -0.4)), 0.0)
    return EnvState(obs, 0, False)


def step(spec: EnvSpec, state: EnvState, action) -> tuple:
    """Advance one step. Returns ``(next_state, reward, done)``."""
    if state.terminated:
        raise EnvError("cannot step a terminated episode; call reset first")
    a = float(np.clip(np.asarray(action, dtype=np.float64).reshape(-1)[0], -1.0, 1.0))
    if spec.kind == "cartpole_continuous":
        obs, reward, failed = _cartpole_step(spec, state.observation, a)
    else:
        obs, reward, failed = _mountaincar_step(spec, state.observation, a)
    k = state.step_index + 1
    done = failed or k >= spec.max_episode_steps
    return EnvState(obs, k, done), reward, done


def _cartpole_step(spec: EnvSpec, obs, a: float):
    x, x_dot, theta, theta_dot = obs
    force = spec.force_scale * a
    total_mass = spec.cart_mass + spec.pole_mass
    pml = spec.pole_mass * spec.pole_half_length
    cos_t = math.cos(theta)
    sin_t = math.sin(theta)
    temp = (force + pml * theta_dot * theta_dot * sin_t) / total_mass
    theta_acc = (spec.gravity * sin_t - cos_t * temp) / (
        spec.pole_half_length * (4.0 / 3.0 - spec.pole_mass * cos_t * cos_t / total_mass)
    )
    x_acc = temp - pml * theta_acc * cos_t / total_mass
    x = x + spec.dt * x_dot
    x_dot = x_dot + spec.dt * x_acc
    theta = theta + spec.dt * theta_dot
    theta_dot = theta_dot + spec.dt * theta_acc
    failed = abs(theta) > spec.theta_limit or abs(x) > spec.x_limit
    return (x, x_dot, theta, theta_dot), 1.0, failed


def _mountaincar_step(spec: EnvSpec, obs, a: float):
    p, v = obs
    v = v + spec.power * a - spec.hill_gain * math.cos(3.0 * p)
    v = min(max(v, -spec.max_speed), spec.max_speed)
    p = p + v
    p = min(max(p, spec.min_position), spec.max_position)
    if p == spec.min_position and v < 0.0:
        v = 0.0
    reached = p >= spec.goal_position
    reward = -spec.action_cost * a * a + (spec.goal_reward if reached else 0.0)
    return (p, v), reward, reached


def run_episode(spec: EnvSpec, policy, rng: np.random.Generator) -> float:
    """Total reward of one episode where ``policy(obs_array) -> action``."""
    state = reset(spec, rng)
    total = 0.0
    while True:
        state, r, done = step(spec, state, policy(state.obs_array()))
        total += r
        if done:
            return total


def with_overrides(spec: EnvSpec, **kw) -> EnvSpec:
    return replace(spec, **kw)
