"""Independent brute-force reference implementations used by the tests."""

import numpy as np


def gae_double_sum(rewards, values, dones, gamma, lam):
    """A_t = sum_l (gamma*lam)^l zeta_{t+l}, truncated at the first done."""
    T = len(rewards)
    zeta = [rewards[t] + (0.0 if dones[t] else gamma * values[t + 1]) - values[t]
            for t in range(T)]
    out = np.zeros(T)
    for t in range(T):
        s = 0.0
        for l in range(T - t):
            s += (gamma * lam) ** l * zeta[t + l]
            if dones[t + l]:
                break
        out[t] = s
    return out


def lambda_one_advantage(rewards, values, dones, gamma):
    """Discounted return (bootstrapped at the horizon) minus the baseline."""
    T = len(rewards)
    out = np.zeros(T)
    for t in range(T):
        g, k = 0.0, t
        while True:
            g += gamma ** (k - t) * rewards[k]
            if dones[k]:
                break
            k += 1
            if k == T:
                g += gamma ** (T - t) * values[T]
                break
        out[t] = g - values[t]
    return out


def central_differences(f, flat, h=1e-6):
    g = np.zeros_like(flat)
    for k in range(flat.size):
        e = np.zeros_like(flat)
        e[k] = h
        g[k] = (f(flat + e) - f(flat - e)) / (2 * h)
    return g


def random_ppo_case(rng, head):
    """A small random net plus a batch whose old log-probs straddle the clip range."""
    from mlah.approximator import init_params
    from mlah.ppo import Batch, evaluate_log_probs

    in_dim = int(rng.integers(1, 5))
    hidden = tuple(int(h) for h in rng.integers(2, 7, size=rng.integers(1, 3)))
    n = int(rng.integers(2, 12))
    obs = rng.normal(size=(n, in_dim))
    if head == "gaussian":
        act_dim = int(rng.integers(1, 3))
        p = init_params(in_dim, act_dim, "gaussian", rng, hidden,
                        log_std_init=float(rng.uniform(-1, 0.5)))
        actions = rng.normal(size=(n, act_dim))
    else:
        k = int(rng.integers(2, 4))
        p = init_params(in_dim, k, "categorical", rng, hidden)
        actions = rng.integers(0, k, size=n).astype(np.float64)
    logp = evaluate_log_probs(p, obs, actions)
    old = logp + rng.normal(scale=0.3, size=n)
    return p, Batch(obs, actions, old, rng.normal(size=n), rng.normal(size=n))


def max_rel_err(g, fd, floor=1e-6):
    return float(np.max(np.abs(g - fd) / np.maximum(np.maximum(np.abs(g), np.abs(fd)), floor)))
