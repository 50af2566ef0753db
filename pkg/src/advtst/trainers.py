"""Fitting the six tests and the adversarially trained deep kernel.

All fitters ascend their objective with Adam and return ``(model, trace)``
where ``trace`` is the per-epoch objective (loss for the classifier).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attack import AttackPlan, build_ensemble, ensemble_attack
from .kernels import (
    C2STKernel,
    DeepKernel,
    GaussianKernel,
    _forward_cache,
    make_classifier,
    make_deep_kernel,
    median_sqdist,
)
from .location import init_location_model, statistic_and_grads
from .mmd import CriterionConfig, criterion_and_grads
from .ndmath import AdamState, NumericError, adam_step, mlp_backward, sigmoid, softplus

GAMMA_EPS = 1e-3


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 2000
    lr: float = 5e-4
    batch_size: int | None = None  # None: full batch
    seed: int = 0
    hidden: int = 50
    n_layers: int = 4
    lam: float = 1e-8
    # adversarial kernel learning
    epsilon: float = 0.05
    inner_steps: int = 1
    beta: float = 0.0
    # classifier: train on standardized inputs, folded back afterwards
    standardize: bool = True
    # location tests
    n_locations: int = 5
    bandwidth_search: bool = False  # location tests: start from a 2**k grid
    freeze_gamma: bool = False

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must lie in [0, 1]")
        if self.epsilon < 0 or self.inner_steps < 1:
            raise ValueError("need epsilon >= 0 and inner_steps >= 1")


def _gamma_to_raw(gamma: float) -> float:
    p = (gamma - GAMMA_EPS) / (1.0 - 2.0 * GAMMA_EPS)
    p = min(max(p, 1e-12), 1.0 - 1e-12)
    return float(np.log(p / (1.0 - p)))


def _raw_to_gamma(u) -> float:
    return float(GAMMA_EPS + (1.0 - 2.0 * GAMMA_EPS) * sigmoid(np.atleast_1d(u))[0])


def _check_pair(sp, sq):
    sp = np.asarray(sp, float)
    sq = np.asarray(sq, float)
    if sp.shape != sq.shape or sp.shape[0] < 2:
        raise ValueError(f"training pair must be two equal-shape sets with n >= 2: {sp.shape}, {sq.shape}")
    return sp, sq


def _finite(value, what):
    if not np.isfinite(value):
        raise NumericError(f"non-finite {what}")
    return value


# lengthscale search: median heuristic times 2**k
GRID_POWERS = tuple(range(-12, 3))


def _best_on_grid(make, sp, sq, crit, base: float):
    """Model from ``make(sigma)`` with the best criterion over the grid."""
    best, best_val = None, -np.inf
    for k in GRID_POWERS:
        model = make(base * 2.0**k)
        value = criterion_and_grads(model, sp, sq, crit)[0]
        if np.isfinite(value) and value > best_val:
            best, best_val = model, value
    return best if best is not None else make(base)


def fit_mmd_gaussian(sp_tr, sq_tr, cfg: TrainConfig):
    """Lengthscale ascent on the criterion, started from the best point of a
    log-grid around the median heuristic."""
    sp, sq = _check_pair(sp_tr, sq_tr)
    crit = CriterionConfig(cfg.lam)
    base = median_sqdist(np.vstack([sp, sq])) / 2.0
    model = _best_on_grid(GaussianKernel.from_sigma, sp, sq, crit, base)
    params = model.parameters()
    opt = AdamState(lr=cfg.lr)
    trace = []
    for _ in range(cfg.epochs):
        value, _, _, grads = criterion_and_grads(model, sp, sq, crit)
        trace.append(_finite(value, "criterion"))
        params = adam_step(opt, params, {"log_sigma": -grads["log_sigma"]})
        model = model.with_parameters(params)
    trace.append(criterion_and_grads(model, sp, sq, crit)[0])
    return model, np.array(trace)


def init_deep_kernel(sp, sq, cfg: TrainConfig, rng) -> DeepKernel:
    """Random network; both bandwidths picked on the log-grid, raw one first."""
    d = sp.shape[1]
    net = make_deep_kernel(d, cfg.hidden, rng, n_layers=cfg.n_layers).net
    pool = np.vstack([sp, sq])
    crit = CriterionConfig(cfg.lam)
    log_q = _best_on_grid(GaussianKernel.from_sigma, sp, sq, crit, median_sqdist(pool) / 2.0).log_sigma
    feats = _forward_cache(net, pool)[0]
    return _best_on_grid(lambda s: DeepKernel(float(np.log(s)), log_q, 0.5, net),
                         sp, sq, crit, median_sqdist(feats) / 2.0)


def _deep_to_opt(model: DeepKernel, freeze_gamma: bool) -> dict:
    params = model.parameters()
    gamma = params.pop("gamma")
    if not freeze_gamma:
        params["gamma_raw"] = np.asarray(_gamma_to_raw(float(gamma)))
    return params


def _opt_to_deep(model: DeepKernel, params: dict, freeze_gamma: bool) -> DeepKernel:
    full = dict(params)
    full["gamma"] = model.gamma if freeze_gamma else _raw_to_gamma(params["gamma_raw"])
    full.pop("gamma_raw", None)
    return model.with_parameters(full)


def _deep_grads_to_opt(grads: dict, params: dict, freeze_gamma: bool, scale: float = -1.0) -> dict:
    out = {k: scale * v for k, v in grads.items() if k != "gamma"}
    if not freeze_gamma:
        s = sigmoid(np.atleast_1d(params["gamma_raw"]))[0]
        out["gamma_raw"] = np.asarray(scale * grads["gamma"] * (1.0 - 2.0 * GAMMA_EPS) * s * (1.0 - s))
    return out


def _batches(n: int, batch_size: int | None, rng):
    if batch_size is None or batch_size >= n:
        yield np.arange(n)
        return
    perm = rng.permutation(n)
    for start in range(0, n, batch_size):
        idx = perm[start:start + batch_size]
        if idx.size >= 2:
            yield idx


def _fit_deep(sp, sq, cfg: TrainConfig, adversarial: bool, model: DeepKernel | None = None):
    rng = np.random.default_rng(cfg.seed)
    crit = CriterionConfig(cfg.lam)
    if model is None:
        model = init_deep_kernel(sp, sq, cfg, rng)
    freeze = cfg.freeze_gamma
    params = _deep_to_opt(model, freeze)
    opt = AdamState(lr=cfg.lr)
    plan = None
    if adversarial and cfg.beta < 1.0 and cfg.epsilon > 0:
        plan = AttackPlan(cfg.epsilon, cfg.inner_steps, {"RoD": 1.0})
    trace = []
    for _ in range(cfg.epochs):
        for idx in _batches(sp.shape[0], cfg.batch_size, rng):
            x, y = sp[idx], sq[idx]
            value, _, _, grads = criterion_and_grads(model, x, y, crit)
            objective = value
            if adversarial and cfg.beta < 1.0:
                if plan is not None:
                    ens = build_ensemble({"RoD": model}, crit)
                    y_adv, _ = ensemble_attack(ens, plan, x, y)
                else:
                    y_adv = y
                adv_value, _, _, adv_grads = criterion_and_grads(model, x, y_adv, crit)
                if cfg.beta == 0.0:
                    objective, grads = adv_value, adv_grads
                else:
                    b = cfg.beta
                    objective = b * value + (1.0 - b) * adv_value
                    grads = {k: b * grads[k] + (1.0 - b) * adv_grads[k] for k in grads}
            trace.append(_finite(objective, "criterion"))
            params = adam_step(opt, params, _deep_grads_to_opt(grads, params, freeze))
            model = _opt_to_deep(model, params, freeze)
    return model, np.array(trace)


def fit_mmd_deep(sp_tr, sq_tr, cfg: TrainConfig, model: DeepKernel | None = None):
    sp, sq = _check_pair(sp_tr, sq_tr)
    return _fit_deep(sp, sq, cfg, adversarial=False, model=model)


def fit_mmd_rod(sp_tr, sq_tr, cfg: TrainConfig, model: DeepKernel | None = None):
    """Max-min training: each step attacks the minibatch against the current
    kernel, then ascends beta*F(X, Y) + (1 - beta)*F(X, Y_adv)."""
    sp, sq = _check_pair(sp_tr, sq_tr)
    return _fit_deep(sp, sq, cfg, adversarial=True, model=model)


def fit_c2st(sp_tr, sq_tr, cfg: TrainConfig, variant: str = "sign"):
    """Cross-entropy training of a scalar-score classifier, P labelled 1."""
    if variant not in ("sign", "logit"):
        raise ValueError("variant must be 'sign' or 'logit'")
    sp, sq = _check_pair(sp_tr, sq_tr)
    rng = np.random.default_rng(cfg.seed)
    model = make_classifier(sp.shape[1], cfg.hidden, rng, n_layers=cfg.n_layers, sign=variant == "sign")
    x_all = np.vstack([sp, sq])
    shift, scale = np.zeros(sp.shape[1]), np.ones(sp.shape[1])
    if cfg.standardize:
        shift = x_all.mean(axis=0)
        scale = x_all.std(axis=0)
        scale[scale == 0] = 1.0
        x_all = (x_all - shift) / scale
    labels = np.concatenate([np.ones(sp.shape[0]), np.zeros(sq.shape[0])])
    params = model.parameters()
    opt = AdamState(lr=cfg.lr)
    trace = []
    for _ in range(cfg.epochs):
        for idx in _batches(x_all.shape[0], cfg.batch_size, rng):
            out, pre = _forward_cache(model.net, x_all[idx])
            f = out[:, 0]
            t = labels[idx]
            # mean BCE with sigmoid(f) as P-probability
            loss = float(np.mean(softplus(f) - t * f))
            trace.append(_finite(loss, "classifier loss"))
            dout = ((sigmoid(f) - t) / idx.size)[:, None]
            grads, _ = mlp_backward(model.net, pre, dout)
            params = adam_step(opt, params, grads)
            model = model.with_parameters(params)
    if cfg.standardize:
        # f(x) = net((x - shift) / scale): absorb the affine map into layer 0
        w0 = params["net.0.W"] / scale[:, None]
        params = dict(params, **{"net.0.W": w0, "net.0.b": params["net.0.b"] - shift @ w0})
        model = model.with_parameters(params)
    return model, np.array(trace)


def classifier_accuracy(model: C2STKernel, sp, sq) -> float:
    fp = model.scores(np.asarray(sp, float))
    fq = model.scores(np.asarray(sq, float))
    return float((np.sum(fp > 0) + np.sum(fq <= 0)) / (fp.size + fq.size))


def fit_locations(sp_tr, sq_tr, cfg: TrainConfig, variant: str = "me"):
    """Ascend the ME/SCF statistic over locations and log-bandwidth."""
    sp, sq = _check_pair(sp_tr, sq_tr)
    rng = np.random.default_rng(cfg.seed)
    grid = range(-4, 2) if cfg.bandwidth_search else ()
    model = init_location_model(sp, sq, cfg.n_locations, variant, rng, bandwidth_grid=grid)
    params = model.parameters()
    opt = AdamState(lr=cfg.lr)
    trace = []
    for _ in range(cfg.epochs):
        value, _, _, grads = statistic_and_grads(model, sp, sq)
        trace.append(_finite(value, "location statistic"))
        params = adam_step(opt, params, {k: -v for k, v in grads.items()})
        model = model.with_parameters(params)
    trace.append(statistic_and_grads(model, sp, sq)[0])
    return model, np.array(trace)
