"""Two-sub-policy hierarchy driven by a master over advantage coordinates.

A run owns one :class:`Hierarchy` (six networks plus optimizer state), one
:class:`Runner` (environment, attack schedule, trailing advantage window) and
one :class:`Streams` bundle of independent random generators. Vanilla PPO is
the same machinery with ``master_kind="none"``: every step goes to the nominal
policy, so vanilla and MLAH runs with the same seed see identical environment
and attack randomness.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

from . import adversary as adv_mod
from . import envs
from .approximator import (
    OptState,
    ParamSet,
    forward,
    init_params,
    sample_categorical,
    sample_gaussian,
)
from .ppo import Batch, PpoConfig, UpdateStats, ppo_update
from .rlcore import (
    ADVERSARIAL,
    NOMINAL,
    Trajectory,
    advantage_coordinate,
    fold_segments,
    gae,
    gae_discounted,
)

MASTER_KINDS = ("oracle", "learned", "none")
STREAM_NAMES = ("env", "attack", "schedule", "action", "master", "update_nom",
                "update_adv", "update_master", "eval", "init_nom", "init_adv",
                "init_master")


@dataclass(frozen=True)
class HierarchyConfig:
    master_kind: str = "oracle"
    h: int = 8
    decision_interval: int = 1
    hidden: tuple = (64, 64)
    master_hidden: tuple = (64, 64)
    master_entropy_coef: float = 0.01
    master_lr: float = 3e-4
    master_value_lr: float = 1e-3
    master_obs_scale: float = 1.0

    def __post_init__(self):
        if self.master_kind not in MASTER_KINDS:
            raise ValueError(f"unknown master kind {self.master_kind!r}")
        if self.h < 1:
            raise ValueError("advantage window h must be at least 1")
        if self.decision_interval < 1:
            raise ValueError("decision_interval must be at least 1")


class Streams:
    """Named, independent generators spawned from one seed."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        children = np.random.SeedSequence(self.seed).spawn(len(STREAM_NAMES))
        self._gens = {n: np.random.Generator(np.random.PCG64(c))
                      for n, c in zip(STREAM_NAMES, children)}

    def __getattr__(self, name):
        gens = self.__dict__.get("_gens")
        if gens is not None and name in gens:
            return gens[name]
        raise AttributeError(name)

    def state(self) -> dict:
        return {n: g.bit_generator.state for n, g in self._gens.items()}

    def set_state(self, state: dict) -> None:
        for n, s in state.items():
            self._gens[n].bit_generator.state = s


@dataclass
class Hierarchy:
    policy_nom: ParamSet
    value_nom: ParamSet
    policy_adv: ParamSet
    value_adv: ParamSet
    policy_master: ParamSet
    value_master: ParamSet
    config: HierarchyConfig = field(default_factory=HierarchyConfig)
    opt: dict = field(default_factory=dict)

    NETS = ("policy_nom", "value_nom", "policy_adv", "value_adv",
            "policy_master", "value_master")

    @property
    def master_kind(self) -> str:
        return self.config.master_kind

    def nets(self) -> dict:
        return {k: getattr(self, k) for k in self.NETS}


MASTER_OBS_DIM = 3  # two advantage coordinates plus a constant bias input


def init_hierarchy(env_spec: envs.EnvSpec, cfg: HierarchyConfig, ppo: PpoConfig,
                   streams: Streams) -> Hierarchy:
    od, ad = env_spec.obs_dim, env_spec.act_dim

    def sub(rng):
        pi = init_params(od, ad, "gaussian", rng, cfg.hidden, final_scale=0.01)
        v = init_params(od, 1, "scalar", rng, cfg.hidden)
        return pi, v

    p_nom, v_nom = sub(streams.init_nom)
    p_adv, v_adv = sub(streams.init_adv)
    p_m = init_params(MASTER_OBS_DIM, 2, "categorical", streams.init_master,
                      cfg.master_hidden, final_scale=0.01)
    v_m = init_params(MASTER_OBS_DIM, 1, "scalar", streams.init_master, cfg.master_hidden)
    opt = {
        "policy_nom": OptState.for_params(p_nom, ppo.policy_lr),
        "value_nom": OptState.for_params(v_nom, ppo.value_lr),
        "policy_adv": OptState.for_params(p_adv, ppo.policy_lr),
        "value_adv": OptState.for_params(v_adv, ppo.value_lr),
        "policy_master": OptState.for_params(p_m, cfg.master_lr),
        "value_master": OptState.for_params(v_m, cfg.master_value_lr),
    }
    return Hierarchy(p_nom, v_nom, p_adv, v_adv, p_m, v_m, cfg, opt)


def master_input(coord, scale: float = 1.0) -> np.ndarray:
    c = np.asarray(coord, dtype=np.float64).reshape(-1, 2) * scale
    return np.hstack([c, np.ones((c.shape[0], 1))]).reshape(
        (3,) if np.ndim(coord) == 1 else (-1, 3))


def select(hier: Hierarchy, coord, true_flag: bool, rng, deterministic: bool) -> tuple:
    """Sub-policy index plus the master's log-prob (0.0 for non-learned masters).

    The oracle reads ``true_flag``; the learned master reads only ``coord``.
    """
    kind = hier.master_kind
    if kind == "oracle":
        return (ADVERSARIAL if true_flag else NOMINAL), 0.0
    if kind == "none":
        return NOMINAL, 0.0
    x = master_input(coord, hier.config.master_obs_scale)
    if not np.all(np.isfinite(x)):
        raise FloatingPointError("advantage coordinate is not finite")
    return sample_categorical(hier.policy_master, x, rng, deterministic)


# -- rollout -----------------------------------------------------------------

@dataclass
class Runner:
    """Mutable loop state carried across iterations of one run."""

    env_spec: envs.EnvSpec
    attack: adv_mod.AttackSpec
    schedule: adv_mod.ScheduleState
    env_state: envs.EnvState
    obs: np.ndarray
    flag: bool
    hist_obs: deque
    hist_rew: deque
    hist_done: deque
    controller: int = NOMINAL
    since_decision: int = 0
    episode_return: float = 0.0
    timesteps: int = 0


def make_runner(env_spec: envs.EnvSpec, attack: adv_mod.AttackSpec,
                schedule: adv_mod.ScheduleState, streams: Streams, h: int) -> Runner:
    state = envs.reset(env_spec, streams.env)
    sched = adv_mod.advance_schedule(schedule, streams.schedule)
    flag = bool(sched.attack_on and sched.enabled and attack.active)
    obs = adv_mod.observe(state.obs_array(), flag, attack, streams.attack)
    return Runner(env_spec, attack, sched, state, obs, flag,
                  deque(maxlen=h), deque(maxlen=h), deque(maxlen=h))


def window_coordinate(hier: Hierarchy, hist_obs, hist_rew, hist_done, obs, gamma, lam):
    if not hist_rew:
        return np.zeros(2)
    stack = np.vstack([*hist_obs, obs])
    v_nom = forward(hier.value_nom, stack)[:, 0]
    v_adv = forward(hier.value_adv, stack)[:, 0]
    c = advantage_coordinate(list(hist_rew), v_nom, v_adv, list(hist_done), gamma, lam)
    return c.as_array()


def rollout(hier: Hierarchy, runner: Runner, T: int, streams: Streams, ppo: PpoConfig,
            track_coords: bool | None = None) -> tuple:
    """Collect ``T`` steps. Returns ``(trajectory, completed_episode_returns)``.

    Per step: (the flag and observation were drawn at the end of the previous
    step) compute the advantage coordinate over the trailing window, let the
    master pick a controller every ``decision_interval`` steps, act, step the
    environment, then advance the schedule and perturb the next observation.
    """
    if T < 1:
        raise ValueError("T must be at least 1")
    cfg = hier.config
    learned = hier.master_kind == "learned"
    if track_coords is None:
        track_coords = learned
    od = runner.env_spec.obs_dim
    clean = np.empty((T, od))
    seen = np.empty((T, od))
    actions = np.empty((T, runner.env_spec.act_dim))
    rewards = np.empty(T)
    logps = np.empty(T)
    dones = np.zeros(T, dtype=bool)
    flags = np.zeros(T, dtype=bool)
    ctrls = np.zeros(T, dtype=np.int64)
    coords = np.zeros((T, 2))
    m_act = np.zeros(T, dtype=np.int64)
    m_logp = np.zeros(T)
    m_dec = np.zeros(T, dtype=bool)
    finished = []
    policies = (hier.policy_nom, hier.policy_adv)
    spec = runner.env_spec

    for t in range(T):
        obs = runner.obs
        flag = runner.flag
        if track_coords:
            coords[t] = window_coordinate(hier, runner.hist_obs, runner.hist_rew,
                                          runner.hist_done, obs, ppo.gamma, ppo.lam)
        if runner.since_decision % cfg.decision_interval == 0:
            runner.controller, lp = select(hier, coords[t], flag, streams.master, False)
            m_dec[t] = True
            m_logp[t] = lp
            runner.since_decision = 0
        runner.since_decision += 1
        c = runner.controller
        a, lp = sample_gaussian(policies[c], obs, streams.action)
        next_state, r, done = envs.step(spec, runner.env_state, a)

        clean[t] = runner.env_state.observation
        seen[t] = obs
        actions[t] = a
        rewards[t] = r
        logps[t] = lp
        dones[t] = done
        flags[t] = flag
        ctrls[t] = c
        m_act[t] = c

        runner.hist_obs.append(obs)
        runner.hist_rew.append(r)
        runner.hist_done.append(done)
        runner.episode_return += r
        if done:
            finished.append(runner.episode_return)
            runner.episode_return = 0.0
            next_state = envs.reset(spec, streams.env)
        runner.env_state = next_state
        runner.schedule = adv_mod.advance_schedule(runner.schedule, streams.schedule)
        runner.flag = bool(runner.schedule.attack_on and runner.schedule.enabled
                           and runner.attack.active)
        runner.obs = adv_mod.observe(next_state.obs_array(), runner.flag, runner.attack,
                                     streams.attack)
        runner.timesteps += 1

    last_coord = np.zeros(2)
    if track_coords:
        last_coord = window_coordinate(hier, runner.hist_obs, runner.hist_rew,
                                       runner.hist_done, runner.obs, ppo.gamma, ppo.lam)
    all_obs = np.vstack([seen, runner.obs[None, :]])
    v_nom = forward(hier.value_nom, all_obs)[:, 0]
    v_adv = forward(hier.value_adv, all_obs)[:, 0]
    traj = Trajectory(clean, seen, actions, rewards, logps, v_nom[:-1], v_adv[:-1], dones,
                      flags, ctrls, coords, m_act, m_logp, m_dec,
                      last_obs=runner.obs.copy(), last_coord=last_coord)
    return traj, finished


# -- optimization ------------------------------------------------------------

def sub_policy_batches(hier: Hierarchy, traj: Trajectory, gamma: float, lam: float) -> dict:
    """Per-sub-policy PPO batches.

    Each sub-policy is scored on its own steps with its own value network.
    A stretch driven by the other sub-policy is treated as part of the
    environment: its rewards fold into the preceding transition (discounted)
    and the bootstrap is the sub-policy's next own observation, so a value
    network is never bootstrapped from the other condition's observations
    mid-trajectory.
    """
    all_obs = np.vstack([traj.obs, traj.last_obs[None, :]])
    out = {}
    for idx, vnet in ((NOMINAL, hier.value_nom), (ADVERSARIAL, hier.value_adv)):
        steps = traj.indices_for(idx)
        if steps.size == 0:
            out[idx] = None
            continue
        fr, disc, fd, nxt = fold_segments(steps, traj.rewards, traj.dones, gamma, len(traj))
        values = forward(vnet, traj.obs[steps])[:, 0]
        boot = forward(vnet, all_obs[nxt])[:, 0]
        adv = gae_discounted(fr, values, boot, disc, fd, lam)
        out[idx] = Batch(traj.obs[steps], traj.actions[steps], traj.log_probs[steps],
                         adv, adv + values)
    return out


def master_batch(hier: Hierarchy, traj: Trajectory, gamma: float, lam: float) -> Batch:
    """Master experience: one transition per decision, reward summed over the
    held block, observation = advantage coordinate plus bias."""
    dec = np.flatnonzero(traj.master_decision)
    n = dec.size
    bounds = np.append(dec, len(traj))
    rew = np.array([traj.rewards[bounds[k]:bounds[k + 1]].sum() for k in range(n)])
    done = np.array([traj.dones[bounds[k]:bounds[k + 1]].any() for k in range(n)])
    scale = hier.config.master_obs_scale
    x = master_input(traj.coords[dec], scale)
    x_all = np.vstack([x, master_input(traj.last_coord, scale)[None, :]])
    values = forward(hier.value_master, x_all)[:, 0]
    # a decision holds for decision_interval steps, so discount per decision
    adv = gae(rew, values, done, gamma ** hier.config.decision_interval, lam)
    return Batch(x, traj.master_actions[dec].astype(np.float64), traj.master_log_probs[dec],
                 adv, adv + values[:-1])


def update_from_trajectory(hier: Hierarchy, traj: Trajectory, ppo: PpoConfig,
                           streams: Streams) -> tuple:
    """Optimize each sub-policy on its own transitions and the learned master on
    all decisions. Attack flags stored in ``traj`` are never read here."""
    batches = sub_policy_batches(hier, traj, ppo.gamma, ppo.lam)
    new = {}
    opt = dict(hier.opt)
    stats = {}
    for idx, name, rng in ((NOMINAL, "nom", streams.update_nom),
                           (ADVERSARIAL, "adv", streams.update_adv)):
        b = batches[idx]
        if b is None:
            stats[name] = UpdateStats(skipped=True)
            continue
        pi, v, op, ov, st = ppo_update(getattr(hier, f"policy_{name}"),
                                       getattr(hier, f"value_{name}"), b, ppo,
                                       opt[f"policy_{name}"], opt[f"value_{name}"], rng)
        new[f"policy_{name}"], new[f"value_{name}"] = pi, v
        opt[f"policy_{name}"], opt[f"value_{name}"] = op, ov
        stats[name] = st
    if hier.master_kind == "learned":
        b = master_batch(hier, traj, ppo.gamma, ppo.lam)
        pi, v, op, ov, st = ppo_update(hier.policy_master, hier.value_master, b, ppo,
                                       opt["policy_master"], opt["value_master"],
                                       streams.update_master,
                                       entropy_coef=hier.config.master_entropy_coef)
        new["policy_master"], new["value_master"] = pi, v
        opt["policy_master"], opt["value_master"] = op, ov
        stats["master"] = st
    return replace(hier, opt=opt, **new), stats


# -- evaluation --------------------------------------------------------------

def evaluate(hier: Hierarchy, env_spec: envs.EnvSpec, episodes: int, rng,
             ppo: PpoConfig) -> float:
    """Mean return of deterministic, attack-free episodes."""
    if episodes <= 0:
        return float("nan")
    cfg = hier.config
    learned = hier.master_kind == "learned"
    policies = (hier.policy_nom, hier.policy_adv)
    totals = []
    for _ in range(episodes):
        state = envs.reset(env_spec, rng)
        hist_obs, hist_rew, hist_done = deque(maxlen=cfg.h), deque(maxlen=cfg.h), deque(maxlen=cfg.h)
        controller, since, total = NOMINAL, 0, 0.0
        while True:
            obs = state.obs_array()
            if since % cfg.decision_interval == 0:
                coord = (window_coordinate(hier, hist_obs, hist_rew, hist_done, obs,
                                           ppo.gamma, ppo.lam) if learned else np.zeros(2))
                controller, _ = select(hier, coord, False, None, True)
                since = 0
            since += 1
            mean = forward(policies[controller], obs)
            state, r, done = envs.step(env_spec, state, mean)
            total += r
            hist_obs.append(obs)
            hist_rew.append(r)
            hist_done.append(done)
            if done:
                break
        totals.append(total)
    return float(np.mean(totals))


# -- iteration driver ---------------------------------------------------------

@dataclass
class IterationReport:
    iteration: int
    timesteps: int
    train_return: float
    eval_return: float
    episodes: int
    steps_nom: int
    steps_adv: int
    attack_frac: float
    master_accuracy: float
    nom_skipped: bool
    adv_skipped: bool
    nom_value_loss: float = 0.0
    adv_value_loss: float = 0.0
    nom_approx_kl: float = 0.0
    adv_approx_kl: float = 0.0
    nom_clip_frac: float = 0.0
    master_entropy: float = 0.0
    log_std: float = 0.0


def train_iteration(hier: Hierarchy, runner: Runner, ppo: PpoConfig, streams: Streams,
                    iteration: int = 0, eval_episodes: int = 1) -> tuple:
    """Collect T steps, update, evaluate. Returns ``(hier, report, traj)``."""
    traj, finished = rollout(hier, runner, ppo.steps_per_iteration, streams, ppo)
    hier, stats = update_from_trajectory(hier, traj, ppo, streams)
    ev = evaluate(hier, runner.env_spec, eval_episodes, streams.eval, ppo)
    n_nom = int(np.sum(traj.controllers == NOMINAL))
    train_ret = float(np.mean(finished)) if finished else runner.episode_return
    m = stats.get("master")
    report = IterationReport(
        iteration=iteration,
        timesteps=runner.timesteps,
        train_return=train_ret,
        eval_return=ev,
        episodes=len(finished),
        steps_nom=n_nom,
        steps_adv=len(traj) - n_nom,
        attack_frac=float(np.mean(traj.attack_flags)),
        master_accuracy=float(np.mean(traj.controllers == traj.attack_flags.astype(np.int64))),
        nom_skipped=stats["nom"].skipped,
        adv_skipped=stats["adv"].skipped,
        nom_value_loss=stats["nom"].value_loss,
        adv_value_loss=stats["adv"].value_loss,
        nom_approx_kl=stats["nom"].approx_kl,
        adv_approx_kl=stats["adv"].approx_kl,
        nom_clip_frac=stats["nom"].clip_frac,
        master_entropy=m.entropy if m is not None else 0.0,
        log_std=float(np.mean(hier.policy_nom.log_std)),
    )
    return hier, report, traj


def pretrain_nominal(hier: Hierarchy, env_spec: envs.EnvSpec, iterations: int,
                     ppo: PpoConfig, streams: Streams) -> Hierarchy:
    """Plain PPO on the nominal pair with the adversary disabled.

    The adversarial pair and the master are left untouched.
    """
    if iterations <= 0:
        return hier
    solo = replace(hier, config=replace(hier.config, master_kind="none"))
    runner = make_runner(env_spec, adv_mod.NO_ATTACK, adv_mod.never(), streams, hier.config.h)
    for _ in range(iterations):
        traj, _ = rollout(solo, runner, ppo.steps_per_iteration, streams, ppo,
                          track_coords=False)
        solo, _ = update_from_trajectory(solo, traj, ppo, streams)
    return replace(hier, policy_nom=solo.policy_nom, value_nom=solo.value_nom,
                   opt={**hier.opt, "policy_nom": solo.opt["policy_nom"],
                        "value_nom": solo.opt["value_nom"]})
