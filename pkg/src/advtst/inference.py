"""Test decisions and power estimation.

MMD-family tests get p-values from a wild bootstrap over the H matrix (or a
plain label permutation); ME/SCF compare against a chi-square quantile.
``evaluate_power`` runs many fresh pairs, optionally attacked, through a
dict of fitted tests.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from joblib import Parallel, delayed
from scipy import signal, stats

from .attack import AttackPlan, CriterionEnsemble, ensemble_attack
from .kernels import C2STKernel, KernelModel, _pair, c2st_sign_value, h_forward
from .location import LocationTestModel, location_statistic
from .mmd import mmd_u

MULTIPLIERS = ("shared", "independent")


@dataclass(frozen=True)
class InferenceConfig:
    alpha: float = 0.05
    n_perm: int = 100
    bootstrap_l: float = 0.5
    seed: int = 0
    # "shared": one multiplier sequence on both sides, diagonal of H dropped;
    # "independent": separate sequences for P and Q over the full H
    multipliers: str = "shared"

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if self.n_perm < 1:
            raise ValueError("n_perm must be >= 1")
        if not self.bootstrap_l > 0:
            raise ValueError("bootstrap_l must be positive")
        if self.multipliers not in MULTIPLIERS:
            raise ValueError(f"multipliers must be one of {MULTIPLIERS}")


@dataclass(frozen=True)
class TestReport:
    __test__ = False  # not a pytest class

    method: str
    statistic: float
    reject: bool
    p_value: float | None = None
    threshold: float | None = None
    seed: int | None = None


def wild_bootstrap_sequence(n: int, l: float, rng: np.random.Generator, size: int | None = None):
    """AR(1) multipliers W_t = e^{-1/l} W_{t-1} + sqrt(1 - e^{-2/l}) tau_t,
    W_0 standard normal. ``size`` draws that many independent rows."""
    if n < 1 or not l > 0:
        raise ValueError("need n >= 1 and l > 0")
    rows = 1 if size is None else size
    a = np.exp(-1.0 / l)
    b = np.sqrt(1.0 - np.exp(-2.0 / l))
    tau = rng.standard_normal((rows, n))
    w = np.empty_like(tau)
    w[:, 0] = tau[:, 0]
    if n > 1:
        w[:, 1:], _ = signal.lfilter([b], [1.0, -a], tau[:, 1:], axis=1, zi=a * w[:, :1])
    return w[0] if size is None else w


def _wild_null(h, cfg: InferenceConfig, rng):
    n = h.shape[0]
    wp = wild_bootstrap_sequence(n, cfg.bootstrap_l, rng, size=cfg.n_perm)
    wp -= wp.mean(axis=1, keepdims=True)
    if cfg.multipliers == "shared":
        quad = np.sum((wp @ h) * wp, axis=1) - (wp * wp) @ np.diag(h)
        return quad / (n * (n - 1))
    wq = wild_bootstrap_sequence(n, cfg.bootstrap_l, rng, size=cfg.n_perm)
    wq -= wq.mean(axis=1, keepdims=True)
    return np.sum((wp @ h) * wq, axis=1) / (n * (n - 1))


def _label_permutation_null(k, n, cfg: InferenceConfig, rng):
    """U-statistic recomputed on random re-splits of the pooled Gram matrix."""
    out = np.empty(cfg.n_perm)
    for i in range(cfg.n_perm):
        idx = rng.permutation(2 * n)
        kp = k[np.ix_(idx, idx)]
        kxy = kp[:n, n:]
        out[i] = mmd_u(kp[:n, :n] + kp[n:, n:] - kxy - kxy.T)
    return out


def _rank_one_permutation_null(w, n, cfg: InferenceConfig, rng):
    # Gram = w w^T, so each re-split needs only a = w[first half] - w[second half]
    out = np.empty(cfg.n_perm)
    for i in range(cfg.n_perm):
        idx = rng.permutation(2 * n)
        a = w[idx[:n]] - w[idx[n:]]
        out[i] = (a.sum() ** 2 - np.dot(a, a)) / (n * (n - 1))
    return out


def default_null_method(model: KernelModel) -> str:
    # classifier kernels use label permutation; gaussian/deep the wild bootstrap
    return "permutation" if model.kind.startswith("c2st") else "wild"


def mmd_permutation_test(model: KernelModel, sp, sq, cfg: InferenceConfig = InferenceConfig(),
                         rng: np.random.Generator | None = None, method: str | None = None,
                         name: str | None = None) -> TestReport:
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    method = method or default_null_method(model)
    if method not in ("wild", "permutation"):
        raise ValueError(f"unknown null method {method!r}")
    if isinstance(model, C2STKernel):
        sp, sq = _pair(sp, sq)
        n = sp.shape[0]
        w = model.scores(np.vstack([sp, sq]))
        if model.sign:
            w = c2st_sign_value(w, model.guard) / 4.0
        a = w[:n] - w[n:]
        est = float((a.sum() ** 2 - np.dot(a, a)) / (n * (n - 1)))
        if method == "permutation":
            perms = _rank_one_permutation_null(w, n, cfg, rng)
        else:
            perms = _wild_null(np.outer(a, a), cfg, rng)
    else:
        h, (z, cache) = h_forward(model, sp, sq)
        est = mmd_u(h)
        if method == "wild":
            perms = _wild_null(h, cfg, rng)
        else:
            perms = _label_permutation_null(model.gram(z)[0], h.shape[0], cfg, rng)
    if est == 0.0 and not np.any(perms):
        p = 1.0  # exactly equal sets
    else:
        p = float(np.mean(perms > est))
    return TestReport(name or model.kind, est, p <= cfg.alpha, p_value=p, seed=cfg.seed)


def location_threshold(model: LocationTestModel, alpha: float) -> float:
    return float(stats.chi2.ppf(1.0 - alpha, df=model.n_features))


def location_test(model: LocationTestModel, sp, sq, cfg: InferenceConfig = InferenceConfig(),
                  name: str | None = None) -> TestReport:
    stat = location_statistic(model, sp, sq)
    thr = location_threshold(model, cfg.alpha)
    p = float(stats.chi2.sf(stat, df=model.n_features))
    return TestReport(name or model.variant, stat, stat > thr, p_value=p, threshold=thr, seed=cfg.seed)


def run_test(name: str, model, sp, sq, cfg: InferenceConfig, rng) -> TestReport:
    if isinstance(model, LocationTestModel):
        return location_test(model, sp, sq, cfg, name=name)
    return mmd_permutation_test(model, sp, sq, cfg, rng=rng, name=name)


@dataclass
class PowerResult:
    names: list
    rejections: np.ndarray  # (pairs, tests) booleans
    attack_losses: list = field(default_factory=list)

    @property
    def rates(self) -> dict[str, float]:
        out = {name: float(r) for name, r in zip(self.names, self.rejections.mean(axis=0))}
        out["Ensemble"] = self.ensemble_rate
        return out

    @property
    def ensemble_rate(self) -> float:
        return float(self.rejections.any(axis=1).mean())


def _one_pair(tests, sampler, n_te, cfg, attack, redraw_p, seed_seq):
    pair_ss, test_ss, extra_ss = seed_seq.spawn(3)
    sp, sq = sampler(n_te, np.random.default_rng(pair_ss))
    loss = None
    if attack is not None:
        ens, plan = attack
        sq, trace = ensemble_attack(ens, plan, sp, sq)
        loss = (trace.losses[0], trace.best_loss)
    if redraw_p:
        sp = sampler(n_te, np.random.default_rng(extra_ss))[0]
    rng = np.random.default_rng(test_ss)
    row = [run_test(name, m, sp, sq, cfg, rng).reject for name, m in tests.items()]
    return row, loss


def evaluate_power(tests: dict, sampler, n_te: int, n_pairs: int, cfg: InferenceConfig = InferenceConfig(),
                   attack: tuple[CriterionEnsemble, AttackPlan] | None = None, seed: int = 0,
                   redraw_p: bool = False, n_jobs: int = 1) -> PowerResult:
    """Rejection rate per test and for the OR-ensemble over ``n_pairs``
    fresh pairs. Each pair owns a spawned seed stream, so results do not
    depend on ``n_jobs``."""
    streams = np.random.SeedSequence(seed).spawn(n_pairs)
    if n_jobs == 1:
        out = [_one_pair(tests, sampler, n_te, cfg, attack, redraw_p, s) for s in streams]
    else:
        out = Parallel(n_jobs=n_jobs)(
            delayed(_one_pair)(tests, sampler, n_te, cfg, attack, redraw_p, s) for s in streams)
    rej = np.array([row for row, _ in out], dtype=bool).reshape(n_pairs, len(tests))
    return PowerResult(list(tests), rej, [loss for _, loss in out])


def evaluate_transfer(sources: dict, targets: dict, sampler, n_te: int, n_pairs: int,
                      plans: dict | AttackPlan, cfg: InferenceConfig = InferenceConfig(), seed: int = 0,
                      redraw_p: bool = False, n_jobs: int = 1) -> dict[str, dict[str, float]]:
    """Attack with each source ensemble, test with the target tests.

    ``sources`` maps a label to a :class:`CriterionEnsemble`; ``plans`` is one
    plan for all sources or a dict keyed like ``sources``. Returns
    ``{source: {target test: rate, ..., "Ensemble": rate}}``.
    """
    out = {}
    for label, ens in sources.items():
        plan = plans[label] if isinstance(plans, dict) else plans
        res = evaluate_power(targets, sampler, n_te, n_pairs, cfg, attack=(ens, plan), seed=seed,
                             redraw_p=redraw_p, n_jobs=n_jobs)
        out[label] = res.rates
    return out
