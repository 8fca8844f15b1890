"""Small feed-forward approximators with hand-written backprop.

Three heads share the same tanh MLP body:

* ``gaussian``    -- mean of a diagonal Gaussian, plus a state-independent
  ``log_std`` vector that is a trainable parameter.
* ``categorical`` -- unnormalized logits.
* ``scalar``      -- a single value estimate.

Layer ``k`` stores its weight matrix as an ``(in_dim, out_dim)`` row-major
block inside ``ParamSet.weights``; the forward pass is ``x @ W + b``.
Everything is float64 numpy so gradient checks and bit-exact replays work.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional, Sequence

import numpy as np

HEAD_KINDS = ("gaussian", "categorical", "scalar")
LOG_2PI = math.log(2.0 * math.pi)


class ContractError(ValueError):
    """Raised when an operation is called outside its contract."""


class NonFiniteError(ContractError, FloatingPointError):
    """Parameters went NaN/inf; also a FloatingPointError so training loops
    can treat it as a numerical failure."""


@dataclass
class ParamSet:
    layer_shapes: tuple
    weights: np.ndarray
    biases: np.ndarray
    head_kind: str
    log_std: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        self.layer_shapes = tuple((int(i), int(o)) for i, o in self.layer_shapes)
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.biases = np.asarray(self.biases, dtype=np.float64)
        self.log_std = np.asarray(self.log_std, dtype=np.float64).reshape(-1)
        if self.head_kind not in HEAD_KINDS:
            raise ContractError(f"unknown head kind {self.head_kind!r}")
        if not self.layer_shapes:
            raise ContractError("at least one layer is required")
        for (_, o), (i, _) in zip(self.layer_shapes[:-1], self.layer_shapes[1:]):
            if o != i:
                raise ContractError("consecutive layer shapes do not chain")
        n_w = sum(i * o for i, o in self.layer_shapes)
        n_b = sum(o for _, o in self.layer_shapes)
        if self.weights.size != n_w or self.biases.size != n_b:
            raise ContractError(
                f"expected {n_w} weights / {n_b} biases, got "
                f"{self.weights.size} / {self.biases.size}"
            )
        if self.head_kind == "categorical" and self.out_dim < 2:
            raise ContractError("categorical head needs at least two outputs")
        if self.head_kind == "scalar" and self.out_dim != 1:
            raise ContractError("scalar head must have exactly one output")
        if self.head_kind == "gaussian":
            if self.log_std.size != self.out_dim:
                raise ContractError("log_std must match the action dimension")
        elif self.log_std.size:
            raise ContractError("log_std only exists on gaussian heads")
        if not (np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.biases))
                and np.all(np.isfinite(self.log_std))):
            raise NonFiniteError("parameters must be finite")

    @property
    def in_dim(self) -> int:
        return self.layer_shapes[0][0]

    @property
    def out_dim(self) -> int:
        return self.layer_shapes[-1][1]

    @property
    def size(self) -> int:
        return self.weights.size + self.biases.size + self.log_std.size

    @cached_property
    def layers(self) -> list:
        """(W, b) views per layer."""
        out = []
        wo = bo = 0
        for i, o in self.layer_shapes:
            W = self.weights[wo:wo + i * o].reshape(i, o)
            b = self.biases[bo:bo + o]
            out.append((W, b))
            wo += i * o
            bo += o
        return out

    def flat(self) -> np.ndarray:
        """All trainable numbers as one vector: weights, biases, log_std."""
        return np.concatenate([self.weights, self.biases, self.log_std])

    def with_flat(self, vec: np.ndarray) -> "ParamSet":
        vec = np.asarray(vec, dtype=np.float64)
        if vec.size != self.size:
            raise ContractError("flat vector length does not match ParamSet")
        nw, nb = self.weights.size, self.biases.size
        return ParamSet(
            self.layer_shapes,
            vec[:nw].copy(),
            vec[nw:nw + nb].copy(),
            self.head_kind,
            vec[nw + nb:].copy(),
        )


def init_params(in_dim: int, out_dim: int, head_kind: str, rng: np.random.Generator,
                hidden: Sequence[int] = (64, 64), final_scale: float = 1.0,
                log_std_init: float = 0.0) -> ParamSet:
    """Glorot-uniform weights, zero biases; last layer scaled by ``final_scale``."""
    dims = [in_dim, *hidden, out_dim]
    shapes = list(zip(dims[:-1], dims[1:]))
    ws = []
    for k, (i, o) in enumerate(shapes):
        lim = math.sqrt(6.0 / (i + o))
        w = rng.uniform(-lim, lim, size=i * o)
        if k == len(shapes) - 1:
            w = w * final_scale
        ws.append(w)
    biases = np.zeros(sum(o for _, o in shapes))
    log_std = np.full(out_dim, log_std_init) if head_kind == "gaussian" else np.zeros(0)
    return ParamSet(shapes, np.concatenate(ws), biases, head_kind, log_std)


def zero_params(shapes, head_kind: str) -> ParamSet:
    n_w = sum(i * o for i, o in shapes)
    n_b = sum(o for _, o in shapes)
    log_std = np.zeros(shapes[-1][1]) if head_kind == "gaussian" else np.zeros(0)
    return ParamSet(shapes, np.zeros(n_w), np.zeros(n_b), head_kind, log_std)


def _check_input(params: ParamSet, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != params.in_dim:
        raise ContractError(
            f"input dimension {x.shape[-1]} does not match network input {params.in_dim}"
        )
    return x


def forward(params: ParamSet, x) -> np.ndarray:
    """Evaluate the network on one input vector or a batch of rows."""
    h = _check_input(params, x)
    layers = params.layers
    for W, b in layers[:-1]:
        h = np.tanh(h @ W + b)
    W, b = layers[-1]
    return h @ W + b


def _forward_cache(params: ParamSet, x: np.ndarray):
    acts = [x]
    h = x
    layers = params.layers
    for W, b in layers[:-1]:
        h = np.tanh(h @ W + b)
        acts.append(h)
    W, b = layers[-1]
    return h @ W + b, acts


def _backward(params: ParamSet, acts, d_out: np.ndarray) -> tuple:
    gw, gb = [], []
    delta = d_out
    layers = params.layers
    for k in range(len(layers) - 1, -1, -1):
        W, _ = layers[k]
        a = acts[k]
        gw.append((a.T @ delta).reshape(-1))
        gb.append(delta.sum(axis=0))
        if k > 0:
            delta = (delta @ W.T) * (1.0 - a * a)
    return np.concatenate(gw[::-1]), np.concatenate(gb[::-1])


LossFn = Callable[[np.ndarray, ParamSet], tuple]


def grad(params: ParamSet, x, loss_fn: LossFn) -> tuple:
    """Loss and flat gradient of ``loss_fn(forward(params, x), params)``.

    ``loss_fn`` returns ``(loss, d_loss/d_output, d_loss/d_log_std)``; the last
    item may be ``None`` for heads without ``log_std``. The returned gradient is
    ordered like :meth:`ParamSet.flat`.
    """
    x = _check_input(params, x)
    if x.ndim == 1:
        x = x[None, :]
    out, acts = _forward_cache(params, x)
    loss, d_out, d_log_std = loss_fn(out, params)
    if not np.isfinite(loss):
        raise FloatingPointError("loss is not finite")
    d_out = np.asarray(d_out, dtype=np.float64).reshape(out.shape)
    gw, gb = _backward(params, acts, d_out)
    if params.log_std.size:
        gs = np.zeros_like(params.log_std) if d_log_std is None else np.asarray(d_log_std)
    else:
        gs = np.zeros(0)
    return float(loss), np.concatenate([gw, gb, gs])


# -- distributions -----------------------------------------------------------

def gaussian_log_prob(mean: np.ndarray, log_std: np.ndarray, action: np.ndarray) -> np.ndarray:
    z = (action - mean) * np.exp(-log_std)
    return np.sum(-0.5 * z * z - log_std - 0.5 * LOG_2PI, axis=-1)


def gaussian_entropy(log_std: np.ndarray) -> float:
    return float(np.sum(log_std + 0.5 * (LOG_2PI + 1.0)))


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - np.max(logits, axis=-1, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(logits))


def sample_gaussian(params: ParamSet, state, rng: np.random.Generator,
                    deterministic: bool = False) -> tuple:
    if params.head_kind != "gaussian":
        raise ContractError("sample_gaussian needs a gaussian head")
    mean = forward(params, state)
    if not np.all(np.isfinite(mean)):
        raise FloatingPointError("policy mean is not finite")
    if deterministic:
        action = mean
    else:
        action = mean + np.exp(params.log_std) * rng.standard_normal(mean.shape)
    return action, float(gaussian_log_prob(mean, params.log_std, action))


def sample_categorical(params: ParamSet, obs, rng: Optional[np.random.Generator],
                       deterministic: bool = False) -> tuple:
    """Sample (or argmax, ties to the lower index) from softmax(logits)."""
    if params.head_kind != "categorical":
        raise ContractError("sample_categorical needs a categorical head")
    logp = log_softmax(forward(params, obs))
    if deterministic:
        idx = int(np.argmax(logp))
    else:
        # inverse-CDF on a single uniform keeps the stream one draw per call
        cdf = np.cumsum(np.exp(logp))
        idx = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
        idx = min(idx, logp.size - 1)
    return idx, float(logp[idx])


# -- optimizer ---------------------------------------------------------------

@dataclass
class OptState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    learning_rate: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon_num: float = 1e-8

    @classmethod
    def for_params(cls, params: ParamSet, learning_rate: float = 3e-4, **kw) -> "OptState":
        return cls(np.zeros(params.size), np.zeros(params.size),
                   learning_rate=learning_rate, **kw)


def adam_step(params: ParamSet, grads: np.ndarray, opt: OptState) -> tuple:
    """One bias-corrected Adam update; returns new (params, opt)."""
    grads = np.asarray(grads, dtype=np.float64)
    if grads.size != params.size or opt.first_moment.size != params.size:
        raise ContractError("gradient / moment length does not match parameters")
    t = opt.step_count + 1
    m = opt.beta1 * opt.first_moment + (1.0 - opt.beta1) * grads
    v = opt.beta2 * opt.second_moment + (1.0 - opt.beta2) * grads * grads
    m_hat = m / (1.0 - opt.beta1 ** t)
    v_hat = v / (1.0 - opt.beta2 ** t)
    new_flat = params.flat() - opt.learning_rate * m_hat / (np.sqrt(v_hat) + opt.epsilon_num)
    new_opt = OptState(m, v, t, opt.learning_rate, opt.beta1, opt.beta2, opt.epsilon_num)
    return params.with_flat(new_flat), new_opt


# -- checkpoint container ----------------------------------------------------

def params_to_arrays(params: ParamSet, prefix: str = "") -> dict:
    meta = {"layer_shapes": [list(s) for s in params.layer_shapes],
            "head_kind": params.head_kind}
    return {
        prefix + "meta": np.array(json.dumps(meta)),
        prefix + "weights": params.weights,
        prefix + "biases": params.biases,
        prefix + "log_std": params.log_std,
    }


def params_from_arrays(arrays, prefix: str = "") -> ParamSet:
    meta = json.loads(str(arrays[prefix + "meta"]))
    return ParamSet(
        [tuple(s) for s in meta["layer_shapes"]],
        np.array(arrays[prefix + "weights"], dtype=np.float64),
        np.array(arrays[prefix + "biases"], dtype=np.float64),
        meta["head_kind"],
        np.array(arrays[prefix + "log_std"], dtype=np.float64),
    )


def save_params(path, params: ParamSet, seed: Optional[int] = None) -> None:
    arrays = params_to_arrays(params)
    arrays["seed"] = np.array(-1 if seed is None else int(seed), dtype=np.int64)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_params(path) -> tuple:
    """Returns (params, seed or None)."""
    with np.load(path, allow_pickle=False) as z:
        params = params_from_arrays(z)
        seed = int(z["seed"])
    return params, (None if seed < 0 else seed)
