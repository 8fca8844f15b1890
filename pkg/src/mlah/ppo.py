"""Clipped-surrogate policy optimization with a separate value network."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .approximator import (
    LOG_2PI,
    OptState,
    ParamSet,
    adam_step,
    forward,
    gaussian_entropy,
    grad,
    log_softmax,
)
from .rlcore import normalize


@dataclass(frozen=True)
class PpoConfig:
    clip_eps: float = 0.2
    epochs: int = 10
    minibatch_size: int = 64
    value_coef: float = 0.5
    entropy_coef: float = 0.0
    max_grad_norm: float = 0.5
    steps_per_iteration: int = 2048
    gamma: float = 0.99
    lam: float = 0.95
    policy_lr: float = 3e-4
    value_lr: float = 1e-3
    normalize_advantages: bool = True

    def __post_init__(self):
        if self.clip_eps <= 0:
            raise ValueError("clip_eps must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if self.minibatch_size < 1 or self.steps_per_iteration < 1:
            raise ValueError("batch sizes must be positive")


def clipped_surrogate(ratio, advantage, clip_eps: float):
    """min(r * A, clip(r, 1 - eps, 1 + eps) * A), elementwise."""
    ratio = np.asarray(ratio, dtype=np.float64)
    advantage = np.asarray(advantage, dtype=np.float64)
    return np.minimum(ratio * advantage,
                      np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps) * advantage)


def _surrogate_terms(logp_new, logp_old, adv, clip_eps):
    ratio = np.exp(logp_new - logp_old)
    unclipped = ratio * adv
    clipped = np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps) * adv
    surr = np.minimum(unclipped, clipped)
    # gradient flows only through the unclipped branch when it is the minimum
    d_ratio = np.where(unclipped <= clipped, adv, 0.0)
    return ratio, surr, d_ratio


@dataclass
class Batch:
    obs: np.ndarray
    actions: np.ndarray
    log_probs: np.ndarray
    advantages: np.ndarray
    returns: np.ndarray

    def __len__(self):
        return int(self.log_probs.size)

    def subset(self, idx) -> "Batch":
        return Batch(self.obs[idx], self.actions[idx], self.log_probs[idx],
                     self.advantages[idx], self.returns[idx])


def policy_loss(params: ParamSet, batch: Batch, clip_eps: float,
                entropy_coef: float = 0.0) -> tuple:
    """(loss, flat gradient, info) of -mean(surrogate) - c_e * entropy."""
    info = {}

    if params.head_kind == "gaussian":
        def loss_fn(mean, p):
            inv_var = np.exp(-2.0 * p.log_std)
            diff = batch.actions - mean
            logp = np.sum(-0.5 * diff * diff * inv_var - p.log_std - 0.5 * LOG_2PI, axis=1)
            ratio, surr, d_ratio = _surrogate_terms(logp, batch.log_probs,
                                                    batch.advantages, clip_eps)
            n = logp.size
            ent = gaussian_entropy(p.log_std)
            loss = -surr.mean() - entropy_coef * ent
            d_logp = -(d_ratio * ratio) / n
            d_mean = d_logp[:, None] * diff * inv_var
            d_log_std = (d_logp[:, None] * (diff * diff * inv_var - 1.0)).sum(axis=0)
            d_log_std = d_log_std - entropy_coef
            info.update(_stats(logp, batch.log_probs, ratio, surr, clip_eps, ent))
            return loss, d_mean, d_log_std
    elif params.head_kind == "categorical":
        acts = batch.actions.astype(np.int64).reshape(-1)

        def loss_fn(logits, p):
            lsm = log_softmax(logits)
            probs = np.exp(lsm)
            n = acts.size
            rows = np.arange(n)
            logp = lsm[rows, acts]
            ratio, surr, d_ratio = _surrogate_terms(logp, batch.log_probs,
                                                    batch.advantages, clip_eps)
            ent_each = -np.sum(probs * lsm, axis=1)
            loss = -surr.mean() - entropy_coef * ent_each.mean()
            d_logp = -(d_ratio * ratio) / n
            onehot = np.zeros_like(logits)
            onehot[rows, acts] = 1.0
            d_logits = d_logp[:, None] * (onehot - probs)
            d_logits += (entropy_coef / n) * probs * (lsm + ent_each[:, None])
            info.update(_stats(logp, batch.log_probs, ratio, surr, clip_eps,
                               float(ent_each.mean())))
            return loss, d_logits, None
    else:
        raise ValueError("policy_loss needs a gaussian or categorical head")

    loss, g = grad(params, batch.obs, loss_fn)
    return loss, g, info


def _stats(logp, logp_old, ratio, surr, clip_eps, entropy):
    return {
        "surrogate": float(surr.mean()),
        "approx_kl": float(np.mean(logp_old - logp)),
        "clip_frac": float(np.mean(np.abs(ratio - 1.0) > clip_eps)),
        "entropy": float(entropy),
    }


def value_loss(params: ParamSet, obs: np.ndarray, returns: np.ndarray,
               value_coef: float = 0.5) -> tuple:
    """(loss, flat gradient) of c_v * mean((V - return)^2)."""
    returns = np.asarray(returns, dtype=np.float64).reshape(-1)

    def loss_fn(out, p):
        err = out[:, 0] - returns
        n = err.size
        return value_coef * np.mean(err * err), (2.0 * value_coef / n) * err[:, None], None

    return grad(params, obs, loss_fn)


def clip_by_norm(g: np.ndarray, max_norm: float) -> np.ndarray:
    if max_norm is None or max_norm <= 0:
        return g
    norm = float(np.sqrt(np.dot(g, g)))
    if norm > max_norm:
        return g * (max_norm / norm)
    return g


@dataclass
class UpdateStats:
    surrogate: float = 0.0
    value_loss: float = 0.0
    approx_kl: float = 0.0
    clip_frac: float = 0.0
    entropy: float = 0.0
    n_samples: int = 0
    skipped: bool = False
    extra: dict = field(default_factory=dict)


def ppo_update(policy: ParamSet, value: ParamSet, batch: Batch, cfg: PpoConfig,
               opt_policy: OptState, opt_value: OptState, rng: np.random.Generator,
               entropy_coef: float | None = None) -> tuple:
    """Run ``cfg.epochs`` passes of shuffled minibatch updates.

    Returns ``(policy, value, opt_policy, opt_value, stats)``. Log-prob ratios are
    taken against ``batch.log_probs``, which stay frozen for the whole call.
    An empty batch is a no-op flagged via ``stats.skipped``.
    """
    c_e = cfg.entropy_coef if entropy_coef is None else entropy_coef
    n = len(batch)
    if n == 0:
        return policy, value, opt_policy, opt_value, UpdateStats(skipped=True)
    adv = normalize(batch.advantages) if cfg.normalize_advantages else batch.advantages
    work = Batch(batch.obs, batch.actions, batch.log_probs, adv, batch.returns)
    mb = min(cfg.minibatch_size, n)
    sums = np.zeros(5)
    count = 0
    for _ in range(cfg.epochs):
        perm = rng.permutation(n)
        for start in range(0, n, mb):
            sub = work.subset(perm[start:start + mb])
            _, g_pi, info = policy_loss(policy, sub, cfg.clip_eps, c_e)
            vl, g_v = value_loss(value, sub.obs, sub.returns, cfg.value_coef)
            policy, opt_policy = adam_step(policy, clip_by_norm(g_pi, cfg.max_grad_norm),
                                           opt_policy)
            value, opt_value = adam_step(value, clip_by_norm(g_v, cfg.max_grad_norm),
                                         opt_value)
            sums += (info["surrogate"], vl, info["approx_kl"], info["clip_frac"],
                     info["entropy"])
            count += 1
    avg = sums / max(count, 1)
    return policy, value, opt_policy, opt_value, UpdateStats(*avg.tolist(), n_samples=n)


def evaluate_log_probs(policy: ParamSet, obs: np.ndarray, actions: np.ndarray) -> np.ndarray:
    out = forward(policy, obs)
    if policy.head_kind == "gaussian":
        diff = actions - out
        inv_var = np.exp(-2.0 * policy.log_std)
        return np.sum(-0.5 * diff * diff * inv_var - policy.log_std - 0.5 * LOG_2PI, axis=1)
    lsm = log_softmax(out)
    return lsm[np.arange(len(actions)), actions.astype(np.int64).reshape(-1)]
