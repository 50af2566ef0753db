"""Mean-embedding (ME) and smooth characteristic function (SCF) statistics.

Both are Hotelling-type quadratic forms ``n zbar' (S + r I)^{-1} zbar`` over
per-pair feature differences ``z_i = F(x_i) - F(y_i)``; they differ only in
the feature map ``F``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .kernels import InsufficientSamplesError, _pair, sqdist
from .ndmath import DimensionError, NumericError

VARIANTS = ("me", "scf")
RIDGE_FLOOR = 1e-12


@dataclass(frozen=True)
class LocationTestModel:
    """``locations`` is a (G, d) array of test locations (ME) or
    frequencies (SCF). ``ridge`` scales the covariance regularizer relative
    to trace(S) / G."""

    variant: str
    locations: np.ndarray = field(repr=False)
    bandwidth: float
    ridge: float = 1e-5

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        loc = np.asarray(self.locations, float)
        if loc.ndim != 2 or loc.shape[0] < 1:
            raise DimensionError("locations must be a non-empty (G, d) array")
        object.__setattr__(self, "locations", loc)
        if not self.bandwidth > 0 or not self.ridge > 0:
            raise ValueError("bandwidth and ridge must be positive")

    @property
    def n_locations(self) -> int:
        return self.locations.shape[0]

    @property
    def n_features(self) -> int:
        return self.n_locations * (1 if self.variant == "me" else 2)

    @property
    def kind(self) -> str:
        return self.variant

    def parameters(self) -> dict[str, np.ndarray]:
        return {"locations": self.locations, "log_bandwidth": np.asarray(np.log(self.bandwidth))}

    def with_parameters(self, params) -> "LocationTestModel":
        return LocationTestModel(
            self.variant,
            np.asarray(params["locations"], float),
            float(np.exp(params["log_bandwidth"])),
            self.ridge,
        )


def _features(model: LocationTestModel, x):
    x = np.asarray(x, float)
    if x.ndim == 1:
        x = x[None, :]
    v = model.locations
    if x.shape[1] != v.shape[1]:
        raise DimensionError(f"samples have {x.shape[1]} features, locations have {v.shape[1]}")
    bw = model.bandwidth
    if model.variant == "me":
        diff = x[:, None, :] - v[None, :, :]
        d = np.einsum("igk,igk->ig", diff, diff)
        f = np.exp(-d / (2.0 * bw**2))
        return f, (x, diff, d, f)
    xh = x / bw
    h = np.exp(-0.5 * np.einsum("ij,ij->i", xh, xh))
    arg = xh @ v.T
    s = h[:, None] * np.sin(arg)
    c = h[:, None] * np.cos(arg)
    return np.hstack([s, c]), (x, xh, s, c)


def _features_backward(model: LocationTestModel, cache, gf):
    """Gradients of ``sum(gf * F)`` w.r.t. (x, locations, log_bandwidth)."""
    bw = model.bandwidth
    v = model.locations
    if model.variant == "me":
        x, diff, d, f = cache
        w = gf * f / bw**2
        dx = -np.einsum("ig,igk->ik", w, diff)
        dv = np.einsum("ig,igk->gk", w, diff)
        dlog = np.sum(w * d)
        return dx, dv, dlog
    x, xh, s, c = cache
    g = model.n_locations
    gs, gc = gf[:, :g], gf[:, g:]
    mix = gs * c - gc * s
    dxh = -xh * np.sum(gs * s + gc * c, axis=1)[:, None] + mix @ v
    dv = mix.T @ xh
    dlog = -np.sum(dxh * xh)
    return dxh / bw, dv, dlog


def me_features(model: LocationTestModel, x) -> np.ndarray:
    if model.variant != "me":
        raise ValueError("model is not an ME model")
    out = _features(model, x)[0]
    return out[0] if np.ndim(x) == 1 else out


def scf_features(model: LocationTestModel, x) -> np.ndarray:
    """Sine block followed by cosine block, 2G entries per sample."""
    if model.variant != "scf":
        raise ValueError("model is not an SCF model")
    out = _features(model, x)[0]
    return out[0] if np.ndim(x) == 1 else out


def features(model: LocationTestModel, x) -> np.ndarray:
    return _features(model, x)[0]


def _quadratic_form(model: LocationTestModel, z):
    n, p = z.shape
    if n < model.n_locations + 2:
        raise InsufficientSamplesError(f"need n >= G + 2 = {model.n_locations + 2}, got {n}")
    zbar = z.mean(axis=0)
    c = z - zbar
    cov = c.T @ c / (n - 1)
    # ridge relative to trace / G (G locations, p = G or 2G features)
    r = model.ridge * np.trace(cov) / model.n_locations + RIDGE_FLOOR
    a_mat = cov + r * np.eye(p)
    try:
        a = np.linalg.solve(a_mat, zbar)
    except np.linalg.LinAlgError as exc:
        raise NumericError("feature covariance is singular") from exc
    stat = float(n * zbar @ a)
    if not np.isfinite(stat):
        raise NumericError("non-finite location statistic")
    return stat, (zbar, c, a)


def location_statistic(model: LocationTestModel, sp, sq) -> float:
    sp, sq = _pair(sp, sq)
    z = _features(model, sp)[0] - _features(model, sq)[0]
    return _quadratic_form(model, z)[0]


def statistic_and_grads(model: LocationTestModel, sp, sq):
    """Returns ``(value, d/dsp, d/dsq, d/dparams)`` with the covariance and
    its trace-scaled ridge differentiated as well."""
    sp, sq = _pair(sp, sq)
    fx, cx = _features(model, sp)
    fy, cy = _features(model, sq)
    z = fx - fy
    n, p = z.shape
    stat, (zbar, c, a) = _quadratic_form(model, z)
    b = np.outer(a, a) + (model.ridge / model.n_locations) * np.dot(a, a) * np.eye(p)
    gz = 2.0 * a[None, :] - (2.0 * n / (n - 1)) * c @ b
    dsp, dvx, dlx = _features_backward(model, cx, gz)
    dsq, dvy, dly = _features_backward(model, cy, -gz)
    dparams = {"locations": dvx + dvy, "log_bandwidth": np.asarray(dlx + dly)}
    return stat, dsp, dsq, dparams


def location_statistic_input_grad(model: LocationTestModel, sp, sq) -> np.ndarray:
    return statistic_and_grads(model, sp, sq)[2]


def init_location_model(sp, sq, n_locations: int, variant: str, rng: np.random.Generator,
                        jitter: float = 1e-2, ridge: float = 1e-5, bandwidth_grid=()) -> LocationTestModel:
    """Locations drawn from the pooled pair with gaussian jitter; bandwidth
    from the median pairwise distance, or the best statistic over
    ``median * 2**k`` for k in ``bandwidth_grid``."""
    pool = np.vstack([np.asarray(sp, float), np.asarray(sq, float)])
    idx = rng.choice(pool.shape[0], size=n_locations, replace=False)
    v = pool[idx] + jitter * rng.standard_normal((n_locations, pool.shape[1]))
    sub = pool if pool.shape[0] <= 1000 else pool[rng.choice(pool.shape[0], 1000, replace=False)]
    d = sqdist(sub)
    med = float(np.median(d[np.triu_indices(d.shape[0], 1)]))
    bw = np.sqrt(med / 2.0) if med > 0 else 1.0
    model = LocationTestModel(variant, v, bw, ridge)
    best = -np.inf
    for k in bandwidth_grid:
        cand = LocationTestModel(variant, v, bw * 2.0**k, ridge)
        stat = location_statistic(cand, sp, sq)
        if stat > best:
            model, best = cand, stat
    return model
