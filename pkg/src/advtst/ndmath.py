"""Dense numerical substrate: a small softplus MLP with hand-written
reverse-mode gradients, and an Adam optimizer over named parameter dicts.

Parameters everywhere in this package are plain ``dict[str, ndarray]`` so
that kernels, networks and location models can share one optimizer.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

ACTIVATIONS = ("softplus", "linear")


class DimensionError(ValueError):
    """Array shapes do not compose."""


class NumericError(ArithmeticError):
    """A value that must be finite is not."""


def softplus(x):
    return np.logaddexp(0.0, x)


def sigmoid(x):
    return expit(x)


@dataclass(frozen=True)
class MlpParams:
    """Weights ``W[k]`` have shape (fan_in, fan_out); the output layer is
    always linear and ``activation`` applies to every hidden layer."""

    weights: tuple
    biases: tuple
    activation: str = "softplus"

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise DimensionError("need one bias per weight matrix, at least one layer")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise DimensionError(f"layer {k}: W {w.shape} / b {b.shape}")
            if k and self.weights[k - 1].shape[1] != w.shape[0]:
                raise DimensionError(f"layer {k} input {w.shape[0]} != previous output")

    @property
    def widths(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def n_in(self) -> int:
        return self.weights[0].shape[0]

    @property
    def n_out(self) -> int:
        return self.weights[-1].shape[1]

    def to_dict(self, prefix: str = "net") -> dict[str, np.ndarray]:
        out = {}
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"{prefix}.{k}.W"] = w
            out[f"{prefix}.{k}.b"] = b
        return out

    def replace(self, params: dict[str, np.ndarray], prefix: str = "net") -> "MlpParams":
        ws = tuple(np.asarray(params[f"{prefix}.{k}.W"], float) for k in range(len(self.weights)))
        bs = tuple(np.asarray(params[f"{prefix}.{k}.b"], float) for k in range(len(self.biases)))
        return MlpParams(ws, bs, self.activation)


def init_mlp(widths, rng: np.random.Generator, activation: str = "softplus") -> MlpParams:
    """Glorot-uniform weights, zero biases."""
    if len(widths) < 2 or min(widths) < 1:
        raise DimensionError(f"bad widths {widths}")
    ws, bs = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        a = np.sqrt(6.0 / (fan_in + fan_out))
        ws.append(rng.uniform(-a, a, size=(fan_in, fan_out)))
        bs.append(np.zeros(fan_out))
    return MlpParams(tuple(ws), tuple(bs), activation)


def _forward_cache(params: MlpParams, x):
    x = np.asarray(x, float)
    if x.ndim != 2 or x.shape[1] != params.n_in:
        raise DimensionError(f"input shape {x.shape}, network expects (*, {params.n_in})")
    pre = []
    h = x
    last = len(params.weights) - 1
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ w + b
        pre.append((h, z))
        if k < last and params.activation == "softplus":
            h = softplus(z)
        else:
            h = z
    return h, pre


def mlp_forward(params: MlpParams, x) -> np.ndarray:
    return _forward_cache(params, x)[0]


def mlp_backward(params: MlpParams, pre, upstream):
    """Backward pass from a cached forward; returns (param grads, input grad)."""
    grads = {}
    g = upstream
    last = len(params.weights) - 1
    for k in range(last, -1, -1):
        h_in, z = pre[k]
        if k < last and params.activation == "softplus":
            g = g * sigmoid(z)
        grads[f"net.{k}.W"] = h_in.T @ g
        grads[f"net.{k}.b"] = g.sum(axis=0)
        g = g @ params.weights[k].T
    return grads, g


def mlp_grad(params: MlpParams, x, upstream):
    """Gradients of ``<upstream, mlp_forward(params, x)>``.

    Returns ``(param_grads, input_grad)`` where ``param_grads`` is keyed like
    :meth:`MlpParams.to_dict`.
    """
    out, pre = _forward_cache(params, x)
    upstream = np.asarray(upstream, float)
    if upstream.shape != out.shape:
        raise DimensionError(f"upstream {upstream.shape} != output {out.shape}")
    return mlp_backward(params, pre, upstream)


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(state: AdamState, params: dict, grads: dict) -> dict:
    """One Adam descent step; mutates ``state`` and returns new params.

    Keys absent from ``grads`` are left untouched. To ascend, pass negated
    gradients.
    """
    for key, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {key!r}")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    new = dict(params)
    for key, g in grads.items():
        g = np.asarray(g, float)
        if np.shape(g) != np.shape(params[key]):
            raise DimensionError(f"{key}: grad {np.shape(g)} vs param {np.shape(params[key])}")
        m = state.m.get(key, np.zeros_like(g))
        v = state.v.get(key, np.zeros_like(g))
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        state.m[key], state.v[key] = m, v
        new[key] = params[key] - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return new
