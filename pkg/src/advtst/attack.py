"""Ensemble PGD attack on two-sample tests.

The attacker perturbs S_Q inside an l-infinity ball to minimize a weighted
sum of test criteria, using signed-gradient steps whose size starts at the
budget and is halved at checkpoints when progress stalls.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .kernels import KernelModel
from .location import LocationTestModel, statistic_and_grads
from .mmd import CriterionConfig, criterion_and_grads
from .ndmath import NumericError

TEST_ORDER = ("MMD-D", "MMD-G", "C2ST-S", "C2ST-L", "ME", "SCF")

# hand-tuned weights per dataset, in TEST_ORDER
FINETUNED_WEIGHTS = {
    "blob": (5, 1, 1, 20, 1, 1),
    "hdgm": (25, 1, 1, 50, 1, 1),
    "higgs": (3, 45, 4, 3, 40, 3),
    "mnist": (1, 45, 1, 1, 60, 1),
    "cifar10": (1, 50, 4, 4, 20, 1),
}


class ConfigurationError(ValueError):
    pass


def finetuned_weights(dataset: str) -> dict[str, float]:
    raw = FINETUNED_WEIGHTS[dataset]
    total = sum(raw)
    return {name: w / total for name, w in zip(TEST_ORDER, raw)}


def naive_weights(names) -> dict[str, float]:
    names = list(names)
    return {name: 1.0 / len(names) for name in names}


def checkpoint_schedule(max_steps: int) -> tuple[int, ...]:
    """Fractional checkpoints p0=0, p1=0.22, p_{j+1} = p_j + max(p_j - p_{j-1} - 0.03, 0.06),
    mapped to ceil(p_j * T) and kept strictly inside (0, T)."""
    p = [0.0, 0.22]
    while p[-1] < 1.0:
        p.append(p[-1] + max(p[-1] - p[-2] - 0.03, 0.06))
    out = []
    for frac in p[1:]:
        # round first so 0.22 * 50 does not ceil to 12
        c = math.ceil(round(frac * max_steps, 9))
        if 1 <= c < max_steps and (not out or c > out[-1]):
            out.append(c)
    return tuple(out)


@dataclass(frozen=True)
class AttackPlan:
    epsilon: float
    max_steps: int = 50
    weights: dict = field(default_factory=dict)
    checkpoints: tuple | None = None
    domain_bounds: tuple | None = None
    auto_weights: bool = False

    def __post_init__(self):
        if self.epsilon < 0:
            raise ConfigurationError("epsilon must be non-negative")
        if self.max_steps < 1:
            raise ConfigurationError("max_steps must be >= 1")
        if not self.auto_weights:
            if not self.weights:
                raise ConfigurationError("weights required unless auto_weights is set")
            if any(w < 0 for w in self.weights.values()):
                raise ConfigurationError("weights must be non-negative")
            if abs(sum(self.weights.values()) - 1.0) > 1e-9:
                raise ConfigurationError(f"weights sum to {sum(self.weights.values())}, not 1")
        if self.checkpoints is None:
            object.__setattr__(self, "checkpoints", checkpoint_schedule(self.max_steps))
        cks = tuple(int(c) for c in self.checkpoints)
        if any(not 1 <= c < self.max_steps for c in cks) or list(cks) != sorted(set(cks)):
            raise ConfigurationError(f"checkpoints must be ascending inside [1, T): {cks}")
        object.__setattr__(self, "checkpoints", cks)
        if self.domain_bounds is not None:
            lo, hi = (np.asarray(b, float) for b in self.domain_bounds)
            if np.any(lo > hi):
                raise ConfigurationError("domain bounds need lo <= hi")
            object.__setattr__(self, "domain_bounds", (lo, hi))


@dataclass(frozen=True)
class EnsembleMember:
    name: str
    value_and_grad: Callable  # (sp, sq) -> (value, d value / d sq)

    def value(self, sp, sq) -> float:
        return self.value_and_grad(sp, sq)[0]


@dataclass(frozen=True)
class CriterionEnsemble:
    members: tuple

    def __post_init__(self):
        if not self.members:
            raise ConfigurationError("ensemble must not be empty")
        names = [m.name for m in self.members]
        if len(set(names)) != len(names):
            raise ConfigurationError(f"duplicate test ids: {names}")

    @property
    def names(self) -> list[str]:
        return [m.name for m in self.members]

    def subset(self, names) -> "CriterionEnsemble":
        keep = set(names)
        return CriterionEnsemble(tuple(m for m in self.members if m.name in keep))


LOCATION_SCALES = ("root_n", "root", "per_sample", "raw")


def location_criterion(stat: float, grad, n: int, scale: str = "root_n"):
    """Turn an ME/SCF statistic (and its input gradient) into an attack criterion.

    The statistic n * zbar' S^-1 zbar grows linearly with n, while the MMD
    criteria stay O(1), so under a signed-gradient step the raw statistic
    drowns out the kernel tests. The options, from strongest to weakest
    location pull:

    ``raw``         the statistic itself
    ``root_n``      stat / sqrt(n)  (default)
    ``root``        sqrt(stat / n), a Mahalanobis mean-over-spread ratio
    ``per_sample``  stat / n
    """
    if scale == "raw":
        return stat, grad
    if scale == "root_n":
        r = np.sqrt(n)
        return stat / r, grad / r
    if scale == "per_sample":
        return stat / n, grad / n
    if scale != "root":
        raise ConfigurationError(f"location scale must be one of {LOCATION_SCALES}")
    value = np.sqrt(max(stat, 0.0) / n)
    if value == 0.0:
        return 0.0, np.zeros_like(grad)
    return float(value), grad / (2.0 * n * value)


def member_for(name: str, model, cfg: CriterionConfig = CriterionConfig(),
               location_scale: str = "root_n") -> EnsembleMember:
    """Wrap a fitted test as an attack target (see :func:`location_criterion`)."""
    if location_scale not in LOCATION_SCALES:
        raise ConfigurationError(f"location scale must be one of {LOCATION_SCALES}")
    if isinstance(model, KernelModel):
        def fn(sp, sq):
            value, _, dsq, _ = criterion_and_grads(model, sp, sq, cfg)
            return value, dsq
    elif isinstance(model, LocationTestModel):
        def fn(sp, sq):
            value, _, dsq, _ = statistic_and_grads(model, sp, sq)
            return location_criterion(value, dsq, sp.shape[0], location_scale)
    else:
        raise TypeError(f"cannot attack a {type(model).__name__}")
    return EnsembleMember(name, fn)


def build_ensemble(models: dict, cfg: CriterionConfig = CriterionConfig(),
                   location_scale: str = "root_n") -> CriterionEnsemble:
    return CriterionEnsemble(tuple(member_for(name, m, cfg, location_scale)
                                   for name, m in models.items()))


def auto_weights(ens: CriterionEnsemble, sp, sq_t, values=None) -> dict[str, float]:
    """Softmax over the members' current criterion values."""
    if values is None:
        values = [m.value(sp, sq_t) for m in ens.members]
    v = np.asarray(values, float)
    e = np.exp(v - v.max())
    w = e / e.sum()
    return dict(zip(ens.names, w.tolist()))


def _check_weights(ens: CriterionEnsemble, weights: dict):
    if set(weights) != set(ens.names):
        raise ConfigurationError(
            f"weight ids {sorted(weights)} do not match ensemble ids {sorted(ens.names)}")


def _loss_and_grad(ens: CriterionEnsemble, plan: AttackPlan, sp, sq):
    evals = [m.value_and_grad(sp, sq) for m in ens.members]
    if plan.auto_weights:
        weights = auto_weights(ens, sp, sq, [v for v, _ in evals])
    else:
        _check_weights(ens, plan.weights)
        weights = plan.weights
    loss = 0.0
    grad = np.zeros_like(sq, dtype=float)
    for m, (value, g) in zip(ens.members, evals):
        w = weights[m.name]
        if w == 0.0:
            continue
        loss += w * value
        grad += w * g
    return float(loss), grad


def ensemble_loss(ens: CriterionEnsemble, plan: AttackPlan, sp, sq_tilde) -> float:
    if plan.auto_weights:
        return _loss_and_grad(ens, plan, sp, sq_tilde)[0]
    _check_weights(ens, plan.weights)
    return float(sum(plan.weights[m.name] * m.value(sp, sq_tilde) for m in ens.members
                     if plan.weights[m.name] != 0.0))


def pgd_step(plan: AttackPlan, grad, sq_t, sq_0, rho: float) -> np.ndarray:
    """Signed descent step, then projection onto the epsilon-ball around
    ``sq_0`` and onto the domain box. ``sign(0) = 0``."""
    grad = np.asarray(grad, float)
    if not np.all(np.isfinite(grad)):
        raise NumericError("non-finite attack gradient")
    if rho <= 0:
        raise ConfigurationError("step size must be positive")
    x = sq_t - rho * np.sign(grad)
    x = np.clip(x, sq_0 - plan.epsilon, sq_0 + plan.epsilon)
    if plan.domain_bounds is not None:
        x = np.clip(x, plan.domain_bounds[0], plan.domain_bounds[1])
    return x


@dataclass
class AttackTrace:
    losses: list = field(default_factory=list)
    rhos: list = field(default_factory=list)
    halved: list = field(default_factory=list)
    best_step: int = 0
    best_loss: float = float("inf")

    def records(self):
        """(step, loss, rho, halved) per iterate. ``rho`` is the size used to
        leave the iterate; ``halved`` marks checkpoints where the size was
        cut and the iterate reset to the best one so far."""
        return list(zip(range(len(self.losses)), self.losses, self.rhos, self.halved))


def ensemble_attack(ens: CriterionEnsemble, plan: AttackPlan, sp, sq, seed=None):
    """Returns ``(sq_tilde, trace)``; ``sq_tilde`` is the lowest-loss iterate
    seen, including the unperturbed start. The attack is deterministic;
    ``seed`` is accepted for interface symmetry only."""
    del seed
    sp = np.asarray(sp, float)
    sq0 = np.asarray(sq, float)
    if sq0.shape[0] < 2:
        raise ConfigurationError("need n >= 2 samples")
    trace = AttackTrace()
    x = sq0.copy()
    loss, grad = _loss_and_grad(ens, plan, sp, x)
    trace.losses.append(loss)
    trace.halved.append(False)
    best, best_loss, best_step = x, loss, 0
    if plan.epsilon == 0.0:
        trace.rhos.append(0.0)
        trace.best_step, trace.best_loss = 0, loss
        return sq0.copy(), trace

    rho = plan.epsilon
    checkpoints = set(plan.checkpoints)
    prev_ck = 0
    rho_at_prev_ck, best_at_prev_ck = rho, best_loss
    for t in range(plan.max_steps):
        trace.rhos.append(rho)
        x = pgd_step(plan, grad, x, sq0, rho)
        loss, grad = _loss_and_grad(ens, plan, sp, x)
        trace.losses.append(loss)
        trace.halved.append(False)
        if loss < best_loss:
            best, best_loss, best_step = x, loss, t + 1
        if t in checkpoints:
            losses = trace.losses
            n_dec = sum(losses[i + 1] < losses[i] for i in range(prev_ck, t))
            stalled = n_dec < 0.75 * (t - prev_ck)
            flat = rho == rho_at_prev_ck and best_loss == best_at_prev_ck
            rho_at_prev_ck, best_at_prev_ck = rho, best_loss
            prev_ck = t
            if stalled or flat:
                rho /= 2.0
                trace.halved[-1] = True
                x = best.copy()
                if plan.auto_weights:
                    loss, grad = _loss_and_grad(ens, plan, sp, x)
                else:
                    # weights are fixed, so the best iterate's loss is known
                    loss, grad = best_loss, _loss_and_grad(ens, plan, sp, x)[1]
                trace.losses[-1] = loss
    trace.rhos.append(rho)
    trace.best_step, trace.best_loss = best_step, best_loss
    return best.copy(), trace
