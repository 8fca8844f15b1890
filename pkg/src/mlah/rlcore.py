"""Trajectory storage, discounted returns and generalized advantage estimates."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

NOMINAL, ADVERSARIAL = 0, 1


def discounted_return(rewards, gamma: float) -> float:
    r = np.asarray(rewards, dtype=np.float64)
    if r.size == 0:
        return 0.0
    return float(np.sum(r * gamma ** np.arange(r.size)))


def td_residuals(rewards, values, dones, gamma: float) -> np.ndarray:
    r = np.asarray(rewards, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    d = np.asarray(dones, dtype=bool)
    if v.size != r.size + 1 or d.size != r.size:
        raise ValueError("values need len(rewards) + 1 entries and dones len(rewards)")
    return r + gamma * v[1:] * (~d) - v[:-1]


def gae(rewards, values, dones, gamma: float, lam: float,
        cuts: Optional[np.ndarray] = None) -> np.ndarray:
    """Backward-recursion GAE.

    ``values`` carries one bootstrap entry past the last reward. A ``done`` at
    step t zeroes the bootstrap V(s_{t+1}) and stops the recursion; a ``cut``
    stops the recursion but keeps the bootstrap (used where control passes to a
    different sub-policy mid-episode).
    """
    delta = td_residuals(rewards, values, dones, gamma)
    stop = np.asarray(dones, dtype=bool)
    if cuts is not None:
        stop = stop | np.asarray(cuts, dtype=bool)
    adv = np.empty_like(delta)
    acc = 0.0
    gl = gamma * lam
    for t in range(delta.size - 1, -1, -1):
        if stop[t]:
            acc = 0.0
        acc = delta[t] + gl * acc
        adv[t] = acc
    return adv


def gae_discounted(rewards, values, bootstrap, discounts, dones, lam: float) -> np.ndarray:
    """GAE where transition k has its own discount and bootstrap value.

    ``values[k]`` is V at the transition's start, ``bootstrap[k]`` V at the
    state it lands in. With every discount equal to gamma and
    ``bootstrap[k] == values[k + 1]`` this is exactly :func:`gae`.
    """
    r = np.asarray(rewards, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    nb = np.asarray(bootstrap, dtype=np.float64)
    g = np.asarray(discounts, dtype=np.float64)
    d = np.asarray(dones, dtype=bool)
    if not (v.size == nb.size == g.size == d.size == r.size):
        raise ValueError("length mismatch in gae_discounted")
    delta = r + g * nb * (~d) - v
    adv = np.empty_like(delta)
    acc = 0.0
    for k in range(delta.size - 1, -1, -1):
        if d[k]:
            acc = 0.0
        acc = delta[k] + g[k] * lam * acc
        adv[k] = acc
    return adv


def fold_segments(steps: np.ndarray, rewards, dones, gamma: float, horizon: int) -> tuple:
    """Collapse the steps *not* in ``steps`` into the preceding transition.

    Returns ``(folded_rewards, discounts, folded_dones, next_index)`` where
    ``next_index[k]`` is the trajectory index whose observation bootstraps
    transition k (``horizon`` means the observation after the last step).
    An episode end inside a folded stretch terminates the transition there.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    dones = np.asarray(dones, dtype=bool)
    n = steps.size
    fr = np.empty(n)
    disc = np.empty(n)
    fd = np.zeros(n, dtype=bool)
    nxt = np.empty(n, dtype=np.int64)
    for k in range(n):
        t = int(steps[k])
        stop = int(steps[k + 1]) if k + 1 < n else horizon
        acc, g = 0.0, 1.0
        j = t
        while True:
            acc += g * rewards[j]
            g *= gamma
            if dones[j]:
                fd[k] = True
                break
            j += 1
            if j >= stop:
                break
        fr[k], disc[k], nxt[k] = acc, g, j if not fd[k] else j + 1
    return fr, disc, fd, nxt


@dataclass
class AdvantageCoordinate:
    a_nom: float
    a_adv: float

    def as_array(self) -> np.ndarray:
        return np.array([self.a_nom, self.a_adv])


def window_advantage(rewards, values, dones, gamma: float, lam: float) -> float:
    """GAE at the first step of a short window (values carry the bootstrap)."""
    r = np.asarray(rewards, dtype=np.float64)
    if r.size == 0:
        raise ValueError("advantage window is empty")
    v = np.asarray(values, dtype=np.float64)
    d = np.asarray(dones, dtype=bool)
    gl = gamma * lam
    acc = 0.0
    for t in range(r.size - 1, -1, -1):
        if d[t]:
            acc = 0.0
            delta = r[t] - v[t]
        else:
            delta = r[t] + gamma * v[t + 1] - v[t]
        acc = delta + gl * acc
    return acc


def advantage_coordinate(rewards, values_nom, values_adv, dones, gamma: float,
                         lam: float) -> AdvantageCoordinate:
    """Master observation from the trailing window.

    ``rewards``/``dones`` cover the last h completed transitions; each value
    sequence has h+1 entries, the last being the current observation.
    """
    return AdvantageCoordinate(
        window_advantage(rewards, values_nom, dones, gamma, lam),
        window_advantage(rewards, values_adv, dones, gamma, lam),
    )


def normalize(adv: np.ndarray) -> np.ndarray:
    """Zero-mean / unit-variance; single-element batches are returned as-is."""
    adv = np.asarray(adv, dtype=np.float64)
    if adv.size < 2:
        return adv.copy()
    return (adv - adv.mean()) / (adv.std() + 1e-8)


@dataclass
class Trajectory:
    """Per-step arrays of one rollout; ``obs`` is what the agent saw."""

    clean_obs: np.ndarray
    obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    log_probs: np.ndarray
    values_nom: np.ndarray
    values_adv: np.ndarray
    dones: np.ndarray
    attack_flags: np.ndarray
    controllers: np.ndarray
    coords: np.ndarray
    master_actions: np.ndarray
    master_log_probs: np.ndarray
    master_decision: np.ndarray
    # observation following the last step, and its coordinate
    last_obs: np.ndarray = field(default_factory=lambda: np.zeros(0))
    last_coord: np.ndarray = field(default_factory=lambda: np.zeros(2))

    def __len__(self) -> int:
        return int(self.rewards.size)

    def __post_init__(self):
        n = self.rewards.size
        for name in ("clean_obs", "obs", "actions", "log_probs", "values_nom",
                     "values_adv", "dones", "attack_flags", "controllers", "coords",
                     "master_actions", "master_log_probs", "master_decision"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"trajectory field {name} has the wrong length")
        if not np.all(np.isfinite(self.rewards)):
            raise ValueError("rewards must be finite")

    def indices_for(self, controller: int) -> np.ndarray:
        return np.flatnonzero(self.controllers == controller)

    def controller_switches(self) -> np.ndarray:
        """True at t when step t+1 is driven by a different sub-policy."""
        sw = np.zeros(len(self), dtype=bool)
        sw[:-1] = self.controllers[1:] != self.controllers[:-1]
        return sw

    def episode_returns(self) -> list:
        out, acc = [], 0.0
        for r, d in zip(self.rewards, self.dones):
            acc += r
            if d:
                out.append(acc)
                acc = 0.0
        return out


def dump_csv(traj: Trajectory, path) -> None:
    """Write one row per step: t, s..., a..., r, logp, v_nom, v_adv, done,
    attack_flag, controller. Floats use ``repr`` so a reload is exact."""
    obs_dim = traj.obs.shape[1]
    act_dim = traj.actions.shape[1]
    header = (["t"] + [f"s{i}" for i in range(obs_dim)] + [f"a{i}" for i in range(act_dim)]
              + ["r", "logp", "v_nom", "v_adv", "done", "attack_flag", "controller"])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for t in range(len(traj)):
            w.writerow(
                [t] + [repr(float(v)) for v in traj.obs[t]]
                + [repr(float(v)) for v in traj.actions[t]]
                + [repr(float(traj.rewards[t])), repr(float(traj.log_probs[t])),
                   repr(float(traj.values_nom[t])), repr(float(traj.values_adv[t])),
                   int(traj.dones[t]), int(traj.attack_flags[t]), int(traj.controllers[t])]
            )
