"""Closed-form bias analysis of the two-state attack chain, plus Monte Carlo.

The attack process is a two-state Markov chain with transition matrix
``[[m, 1-m], [n, 1-n]]`` (row 0 = nominal). ``V0``/``V1`` are the value
primitives under purely nominal / purely adversarial exposure.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Callable, Optional

import numpy as np


class DegenerateChainError(ValueError):
    pass


class AssumptionError(ValueError):
    """A lemma was checked outside its domain (needs n < m and V1 < V0)."""


@dataclass(frozen=True)
class ChainParams:
    m: float
    n: float
    V0: float = 1.0
    V1: float = 0.0
    gamma: float = 0.99
    alpha: float = 0.1
    delta: float = 0.0
    max_abs_adv: float = 1.0
    # representative advantage used to pick the epsilon-tilde branch
    a_hat: Optional[float] = None

    def __post_init__(self):
        if not (0.0 <= self.m <= 1.0 and 0.0 <= self.n <= 1.0):
            raise ValueError("m and n must lie in [0, 1]")

    @property
    def assumption1(self) -> bool:
        return self.n < self.m

    @property
    def definition1(self) -> bool:
        return self.V1 < self.V0

    @property
    def delta_V(self) -> float:
        return self.V0 - self.V1


def stationary(m: float, n: float) -> tuple:
    """Long-run (nominal, adversarial) visitation fractions."""
    denom = 1.0 - m + n
    if m == 1.0 and n == 0.0:
        raise DegenerateChainError("m=1, n=0: both states absorbing, no unique stationary law")
    if denom <= 0:
        raise DegenerateChainError("1 - m + n must be positive")
    p1 = (1.0 - m) / denom
    return 1.0 - p1, p1


def expected_values(cp: ChainParams) -> tuple:
    """(E_unc, E_con): single-policy expectation vs. expectation conditioned on
    starting from a nominal state."""
    p0, p1 = stationary(cp.m, cp.n)
    e_unc = cp.V0 * p0 + cp.V1 * p1
    e_con = cp.V0 * cp.m + cp.V1 * (1.0 - cp.m)
    return e_unc, e_con


def biases(cp: ChainParams) -> tuple:
    """(delta_con, delta_unc): state-value bias relative to V0."""
    denom = 1.0 - cp.m + cp.n
    if denom <= 0:
        raise DegenerateChainError("1 - m + n must be positive")
    d_con = (1.0 - cp.m) * cp.delta_V
    d_unc = (1.0 - cp.m) * cp.delta_V / denom
    return d_con, d_unc


def _require_domain(cp: ChainParams) -> None:
    if not cp.assumption1:
        raise AssumptionError("lemma needs n < m")
    if not cp.definition1:
        raise AssumptionError("lemma needs V1 < V0")


def lemma1(cp: ChainParams) -> bool:
    _require_domain(cp)
    e_unc, e_con = expected_values(cp)
    return e_unc < e_con


def lemma2(cp: ChainParams) -> bool:
    _require_domain(cp)
    d_con, d_unc = biases(cp)
    return d_con < d_unc


def value_gap_identity(cp: ChainParams) -> float:
    """E_unc - E_con in factored form (V0 - V1)(n - m)(1 - m) / (1 - m + n)."""
    return cp.delta_V * (cp.n - cp.m) * (1.0 - cp.m) / (1.0 - cp.m + cp.n)


def epsilon_tilde(max_abs_adv: float, gamma: float, delta: float, a_hat: float) -> float:
    """Advantage bound after removing a constant state-value bias ``delta``.

    ``a_hat`` selects the branch: at or above (1-gamma)*delta, strictly between
    zero and that threshold, or non-positive.
    """
    if not 0.0 < gamma < 1.0:
        raise ValueError("gamma must be in (0, 1)")
    thr = (1.0 - gamma) * delta
    if a_hat >= thr:
        return max_abs_adv + (gamma - 1.0) * delta
    if a_hat > 0.0:
        return -max_abs_adv + (1.0 - gamma) * delta
    return max_abs_adv + (1.0 - gamma) * delta


def prop2_bound(cp: ChainParams) -> tuple:
    """Minimal constant C and a predicate on the observed reward-bias gap.

    The conditioned learner has the higher lower bound when
    ``gap < C * (V0 - V1)``.
    """
    g = cp.gamma
    if not 0.0 < g < 1.0:
        raise ValueError("gamma must be in (0, 1)")
    c_min = ((cp.m - cp.n) * (1.0 - cp.m) * (4.0 * g * cp.alpha ** 2 + 1.0 - g)
             / ((1.0 - cp.m + cp.n) * (1.0 - g)))
    dv = cp.delta_V

    def predicate(delta_hat_gap: float) -> bool:
        return delta_hat_gap < c_min * dv

    return c_min, predicate


def prop2_expanded(cp: ChainParams) -> float:
    """C_min * dV rebuilt from the bias difference:
    ((1-m) dV / (1-m+n) - (1-m) dV) * (4 gamma alpha^2 / (1-gamma) + 1)."""
    dv = cp.delta_V
    g = cp.gamma
    return (((1.0 - cp.m) * dv / (1.0 - cp.m + cp.n) - (1.0 - cp.m) * dv)
            * (4.0 * g * cp.alpha ** 2 / (1.0 - g) + 1.0))


def biased_advantage(r: float, v_next_hat: float, v_hat: float, gamma: float,
                     delta_next: float, delta_now: float) -> tuple:
    """One-step advantage with biased values (A) and without (A_hat)."""
    a = r + gamma * (v_next_hat + delta_next) - (v_hat + delta_now)
    a_hat = r + gamma * v_next_hat - v_hat
    return a, a_hat


# -- Monte Carlo -------------------------------------------------------------

@dataclass
class ChainSample:
    p0: float
    p1: float
    std_err: float
    nominal_lengths: np.ndarray
    adversarial_lengths: np.ndarray

    def histogram(self, which: str = "nominal", bins: int = 20):
        data = self.nominal_lengths if which == "nominal" else self.adversarial_lengths
        if data.size == 0:
            return np.zeros(0, dtype=np.int64), np.zeros(0)
        return np.histogram(data, bins=bins)


def chain_std_err(m: float, n: float, steps: int) -> float:
    """Asymptotic standard error of the empirical nominal fraction.

    Consecutive states are correlated with lag-one coefficient m - n, which
    inflates the binomial variance by (1 + (m-n)) / (1 - (m-n)).
    """
    try:
        p0, p1 = stationary(m, n)
    except DegenerateChainError:
        return 0.0
    lam = m - n
    if lam >= 1.0:
        return 0.0
    return math.sqrt(p0 * p1 * (1.0 + lam) / (1.0 - lam) / steps)


def simulate_chain(m: float, n: float, steps: int, seed: int = 0,
                   start_adversarial: bool = False) -> ChainSample:
    """Simulate ``steps`` states of the chain via geometric sojourn times.

    A nominal sojourn lasts Geometric(1-m) steps and an adversarial one
    Geometric(n), so the work is vectorized over sojourns rather than steps.
    The final sojourn is cut at ``steps`` and left out of the length samples.
    """
    if steps < 1:
        raise ValueError("steps must be at least 1")
    rng = np.random.default_rng(seed)
    leave = (1.0 - m, n)  # per-step exit probability of state 0 / state 1
    cur = 1 if start_adversarial else 0
    total = 0
    states, lens = [], []
    truncated_tail = False
    chunk = 4096
    while total < steps:
        p, q = leave[cur], leave[1 - cur]
        if p <= 0.0:
            states.append(np.array([cur]))
            lens.append(np.array([steps - total]))
            truncated_tail = True
            break
        seq = np.empty(2 * chunk, dtype=np.int64)
        seq[0::2] = rng.geometric(p, size=chunk)
        seq[1::2] = rng.geometric(q, size=chunk) if q > 0.0 else steps + 1
        st = np.empty(2 * chunk, dtype=np.int64)
        st[0::2], st[1::2] = cur, 1 - cur
        ends = total + np.cumsum(seq)
        if ends[-1] < steps:
            states.append(st)
            lens.append(seq)
            total = int(ends[-1])
            continue
        k = int(np.searchsorted(ends, steps, side="left"))
        seq = seq[:k + 1].copy()
        seq[k] -= int(ends[k]) - steps
        states.append(st[:k + 1])
        lens.append(seq)
        truncated_tail = True
        total = steps
    states = np.concatenate(states)
    lens = np.concatenate(lens)
    p0 = float(lens[states == 0].sum()) / steps
    if truncated_tail:
        states, lens = states[:-1], lens[:-1]
    return ChainSample(p0, 1.0 - p0, chain_std_err(m, n, steps),
                       lens[states == 0], lens[states == 1])


# -- report ------------------------------------------------------------------

@dataclass
class AnalysisReport:
    m: float
    n: float
    V0: float
    V1: float
    gamma: float
    alpha: float
    p0: float
    p1: float
    E_unc: float
    E_con: float
    delta_unc: float
    delta_con: float
    assumption1: bool
    definition1: bool
    lemma1_holds: Optional[bool]
    lemma2_holds: Optional[bool]
    C_bound: float
    epsilon_tilde: float
    mc_p0: Optional[float] = None
    mc_std_err: Optional[float] = None

    def as_dict(self) -> dict:
        return asdict(self)


def analyze(cp: ChainParams, mc_steps: int = 0, seed: int = 0) -> AnalysisReport:
    p0, p1 = stationary(cp.m, cp.n)
    e_unc, e_con = expected_values(cp)
    d_con, d_unc = biases(cp)
    in_domain = cp.assumption1 and cp.definition1
    c_min, _ = prop2_bound(cp)
    a_hat = cp.max_abs_adv if cp.a_hat is None else cp.a_hat
    eps = epsilon_tilde(cp.max_abs_adv, cp.gamma, cp.delta, a_hat)
    mc_p0 = mc_se = None
    if mc_steps > 0:
        s = simulate_chain(cp.m, cp.n, mc_steps, seed)
        mc_p0, mc_se = s.p0, s.std_err
    return AnalysisReport(
        cp.m, cp.n, cp.V0, cp.V1, cp.gamma, cp.alpha, p0, p1, e_unc, e_con, d_unc, d_con,
        cp.assumption1, cp.definition1,
        (e_unc < e_con) if in_domain else None,
        (d_con < d_unc) if in_domain else None,
        c_min, eps, mc_p0, mc_se,
    )


def lemma_sweep(n_samples: int, seed: int = 0,
                sampler: Optional[Callable] = None) -> dict:
    """Vectorized check of both lemmas and the value-gap identity on random
    tuples with n < m and V1 < V0."""
    rng = np.random.default_rng(seed)
    if sampler is None:
        m = rng.uniform(0.0, 1.0, n_samples)
        n = m * rng.uniform(0.0, 1.0, n_samples)
        v0 = rng.uniform(-10.0, 10.0, n_samples)
        v1 = v0 - rng.uniform(1e-3, 10.0, n_samples)
    else:
        m, n, v0, v1 = sampler(rng, n_samples)
    denom = 1.0 - m + n
    p0 = n / denom
    p1 = (1.0 - m) / denom
    e_unc = v0 * p0 + v1 * p1
    e_con = v0 * m + v1 * (1.0 - m)
    d_con = (1.0 - m) * (v0 - v1)
    d_unc = (1.0 - m) * (v0 - v1) / denom
    ident = (v0 - v1) * (n - m) * (1.0 - m) / denom
    return {
        "n": int(n_samples),
        "lemma1_frac": float(np.mean(e_unc < e_con)),
        "lemma2_frac": float(np.mean(d_con < d_unc)),
        "identity_max_err": float(np.max(np.abs((e_unc - e_con) - ident))),
    }
