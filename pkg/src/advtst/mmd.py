"""U-statistic MMD^2, its regularized H1 variance estimate, and the test
criterion MMD^2 / sigma, with gradients through the H matrix."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kernels import (
    C2STKernel,
    InsufficientSamplesError,
    KernelModel,
    _forward_cache,
    _pair,
    h_backward,
    h_forward,
)
from .ndmath import mlp_backward

DEFAULT_LAMBDA = 1e-8


@dataclass(frozen=True)
class CriterionConfig:
    lam: float = DEFAULT_LAMBDA

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("lambda must be positive")


def _square(h):
    h = np.asarray(h, float)
    if h.ndim != 2 or h.shape[0] != h.shape[1]:
        raise ValueError(f"H must be square, got {h.shape}")
    if h.shape[0] < 2:
        raise InsufficientSamplesError("need n >= 2")
    return h


def mmd_u(h) -> float:
    """Mean of the off-diagonal entries of H."""
    h = _square(h)
    n = h.shape[0]
    return float((h.sum() - np.trace(h)) / (n * (n - 1)))


def variance_hat(h, cfg: CriterionConfig = CriterionConfig()) -> float:
    h = _square(h)
    n = h.shape[0]
    r = h.sum(axis=1)
    return float(4.0 / n**3 * np.dot(r, r) - 4.0 / n**4 * r.sum() ** 2 + cfg.lam)


def criterion_from_h(h, cfg: CriterionConfig = CriterionConfig()) -> float:
    return mmd_u(h) / np.sqrt(variance_hat(h, cfg))


def criterion_h_grad(h, cfg: CriterionConfig = CriterionConfig()):
    """Returns ``(criterion, dcriterion/dH)``."""
    h = _square(h)
    n = h.shape[0]
    r = h.sum(axis=1)
    s = r.sum()
    m = (s - np.trace(h)) / (n * (n - 1))
    v = 4.0 / n**3 * np.dot(r, r) - 4.0 / n**4 * s**2 + cfg.lam
    sd = np.sqrt(v)
    dm = (np.ones((n, n)) - np.eye(n)) / (n * (n - 1))
    dv = np.broadcast_to((8.0 / n**3 * r - 8.0 / n**4 * s)[:, None], (n, n))
    return m / sd, dm / sd - m / (2.0 * v * sd) * dv


def criterion(model: KernelModel, sp, sq, cfg: CriterionConfig = CriterionConfig()) -> float:
    return criterion_from_h(h_forward(model, sp, sq)[0], cfg)


def _rank_one_criterion(model: C2STKernel, sp, sq, cfg: CriterionConfig):
    # classifier Grams are w w^T, so H = a a^T with a = w(x) - w(y) and the
    # criterion reduces to sums over a: O(n) instead of O(n^2)
    sp, sq = _pair(sp, sq)
    n = sp.shape[0]
    out, pre = _forward_cache(model.net, np.vstack([sp, sq]))
    f = out[:, 0]
    if model.sign:
        w = (f / (np.abs(f) + model.guard) + 1.0) / 4.0
    else:
        w = f
    a = w[:n] - w[n:]
    big_a, big_b = a.sum(), np.dot(a, a)
    m = (big_a**2 - big_b) / (n * (n - 1))
    v = 4.0 / n**3 * big_a**2 * big_b - 4.0 / n**4 * big_a**4 + cfg.lam
    sd = np.sqrt(v)
    dm = (2.0 * big_a - 2.0 * a) / (n * (n - 1))
    dv = 4.0 / n**3 * (2.0 * big_a * big_b + 2.0 * big_a**2 * a) - 16.0 / n**4 * big_a**3
    da = dm / sd - m / (2.0 * v * sd) * dv
    dw = np.concatenate([da, -da])
    if model.sign:
        dw = dw / 4.0 * model.guard / (np.abs(f) + model.guard) ** 2
    grads, dz = mlp_backward(model.net, pre, dw[:, None])
    return float(m / sd), dz[:n], dz[n:], grads


def criterion_and_grads(model: KernelModel, sp, sq, cfg: CriterionConfig = CriterionConfig()):
    """One H evaluation shared by value and both gradient families.

    Returns ``(value, d/dsp, d/dsq, d/dparams)``.
    """
    if isinstance(model, C2STKernel):
        return _rank_one_criterion(model, sp, sq, cfg)
    h, state = h_forward(model, sp, sq)
    value, gh = criterion_h_grad(h, cfg)
    dsp, dsq, dparams = h_backward(model, state, gh)
    return value, dsp, dsq, dparams


def criterion_input_grad(model, sp, sq, cfg: CriterionConfig = CriterionConfig()) -> np.ndarray:
    return criterion_and_grads(model, sp, sq, cfg)[2]


def criterion_param_grad(model, sp, sq, cfg: CriterionConfig = CriterionConfig()) -> dict:
    return criterion_and_grads(model, sp, sq, cfg)[3]


def mmd2(model: KernelModel, sp, sq) -> float:
    return mmd_u(h_forward(model, sp, sq)[0])
