"""Observation-channel adversary: uniform l-inf perturbations plus scheduling.

The adversary only ever touches the observation handed to the agent. It has no
access to rewards; callers compute rewards from the clean environment state.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

ATTACK_KINDS = ("none", "whitenoise", "bias")
SCHEDULE_MODES = ("fixed_interval", "markov")


@dataclass(frozen=True)
class AttackSpec:
    low: float = 0.0
    high: float = 0.0
    epsilon_attack: float = 0.0
    kind: str = "none"

    def __post_init__(self):
        if self.kind not in ATTACK_KINDS:
            raise ValueError(f"unknown attack kind {self.kind!r}")
        if self.low > self.high:
            raise ValueError("attack bounds need low <= high")
        if self.epsilon_attack < 0:
            raise ValueError("epsilon_attack must be non-negative")
        if max(abs(self.low), abs(self.high)) > self.epsilon_attack + 1e-15:
            raise ValueError("max(|low|, |high|) exceeds epsilon_attack")

    @property
    def active(self) -> bool:
        return self.kind != "none"


def whitenoise(b: float) -> AttackSpec:
    """Symmetric U(-b, b) attack."""
    return AttackSpec(-abs(b), abs(b), abs(b), "whitenoise")


def bias(low: float, high: float) -> AttackSpec:
    if low == high:
        raise ValueError("a bias attack needs low != high; use shift() for a constant offset")
    return AttackSpec(low, high, max(abs(low), abs(high)), "bias")


def shift(c: float) -> AttackSpec:
    """Degenerate U(c, c) attack, handy for exact tests."""
    return AttackSpec(c, c, abs(c), "bias")


NO_ATTACK = AttackSpec()


def perturb(state, spec: AttackSpec, rng: np.random.Generator) -> np.ndarray:
    s = np.asarray(state, dtype=np.float64)
    if spec.low == spec.high:
        return s + spec.low
    return s + rng.uniform(spec.low, spec.high, size=s.shape)


@dataclass(frozen=True)
class ScheduleState:
    mode: str = "fixed_interval"
    attack_on: bool = False
    counter: int = 0
    on_len: int = 5000
    off_len: int = 10000
    m: float = 1.0
    n: float = 0.0
    enabled: bool = True

    def __post_init__(self):
        if self.mode not in SCHEDULE_MODES:
            raise ValueError(f"unknown schedule mode {self.mode!r}")
        if self.counter < 0 or self.on_len < 0 or self.off_len < 0:
            raise ValueError("schedule counters must be non-negative")
        if not (0.0 <= self.m <= 1.0 and 0.0 <= self.n <= 1.0):
            raise ValueError("m and n must be probabilities")

    @property
    def satisfies_assumption(self) -> bool:
        """Whether n < m, i.e. nominal states dominate in the long run."""
        return self.n < self.m


def never() -> ScheduleState:
    """A schedule that keeps the attack off permanently."""
    return ScheduleState(enabled=False)


def fixed_interval(on_len: int, off_len: int, start_on: bool = False) -> ScheduleState:
    return ScheduleState("fixed_interval", start_on, 0, on_len, off_len)


def markov(m: float, n: float, start_on: bool = False) -> ScheduleState:
    return ScheduleState("markov", start_on, 0, m=m, n=n)


def advance_schedule(sched: ScheduleState, rng: np.random.Generator) -> ScheduleState:
    """Flag for the next timestep.

    Markov mode consumes exactly one uniform per call; from nominal the chain
    stays nominal w.p. ``m``, from adversarial it returns to nominal w.p. ``n``.
    Fixed mode counts steps within the current phase and toggles once the phase
    length (``on_len`` or ``off_len``) is exhausted.
    """
    if not sched.enabled:
        return sched
    if sched.mode == "markov":
        u = rng.random()
        if sched.attack_on:
            on = not (u < sched.n)
        else:
            on = not (u < sched.m)
        return replace(sched, attack_on=on, counter=sched.counter + 1)
    on = sched.attack_on
    counter = sched.counter
    phase_len = sched.on_len if on else sched.off_len
    if counter >= phase_len:
        on = not on
        counter = 0
        # a zero-length phase is skipped entirely
        if (sched.on_len if on else sched.off_len) == 0:
            on = not on
    return replace(sched, attack_on=on, counter=counter + 1)


def observe(clean_obs: np.ndarray, attack_on: bool, spec: AttackSpec,
            rng: np.random.Generator) -> np.ndarray:
    """Observation handed to the agent: perturbed during attacks, else identity."""
    if attack_on and spec.active:
        return perturb(clean_obs, spec, rng)
    return clean_obs
