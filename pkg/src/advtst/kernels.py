"""MMD-family kernels: gaussian, deep, and the two classifier-derived kernels.

Every kernel works on a pooled sample matrix ``z`` and exposes a Gram
forward pass plus a backward pass returning gradients with respect to
``z`` and to the kernel's own parameters. The H-matrix of the U-statistic
is assembled from the pooled Gram of ``[sp; sq]``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .ndmath import (
    DimensionError,
    MlpParams,
    NumericError,
    _forward_cache,
    init_mlp,
    mlp_backward,
)

SIGN_GUARD = 1e-12

# direct pairwise differences for narrow inputs: exact, so equal rows give
# bitwise-equal Gram entries
_DIRECT_MAX_DIM = 8


class InsufficientSamplesError(ValueError):
    pass


def sqdist(z: np.ndarray) -> np.ndarray:
    n, d = z.shape
    if d <= _DIRECT_MAX_DIM:
        # column-wise differences: exact and symmetric
        out = np.subtract.outer(z[:, 0], z[:, 0])
        out *= out
        buf = np.empty_like(out)
        for k in range(1, d):
            np.subtract.outer(z[:, k], z[:, k], out=buf)
            buf *= buf
            out += buf
        return out
    sq = np.einsum("ij,ij->i", z, z)
    out = z @ z.T
    out *= -2.0
    out += sq[:, None]
    out += sq[None, :]
    np.maximum(out, 0.0, out=out)
    np.fill_diagonal(out, 0.0)
    return out


def sqdist_backward(z: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. ``z`` of ``sum(g * sqdist(z))`` for symmetric ``g``.

    The diagonal of ``g`` is zeroed in place: it never contributes, and
    leaving it in cancels tiny off-diagonal terms away.
    """
    np.fill_diagonal(g, 0.0)
    return 4.0 * (g.sum(axis=1)[:, None] * z - g @ z)


def _check_samples(z):
    z = np.asarray(z, float)
    if z.ndim != 2:
        raise DimensionError(f"expected a 2-d sample matrix, got shape {z.shape}")
    if not np.all(np.isfinite(z)):
        raise NumericError("non-finite sample values")
    return z


class KernelModel:
    """Base class. Subclasses are frozen dataclasses; ``kind`` is the tag."""

    kind: str = ""

    def parameters(self) -> dict[str, np.ndarray]:
        raise NotImplementedError

    def with_parameters(self, params: dict) -> "KernelModel":
        raise NotImplementedError

    def gram(self, z):
        """Returns ``(K, cache)`` for the pooled sample matrix ``z``."""
        raise NotImplementedError

    def gram_backward(self, z, gk, cache):
        """Returns ``(dz, dparams)`` for a symmetric upstream ``gk = dL/dK``."""
        raise NotImplementedError

    @property
    def n_in(self) -> int | None:
        return None


@dataclass(frozen=True)
class GaussianKernel(KernelModel):
    """k(x, y) = exp(-|x - y|^2 / (2 sigma)); ``sigma`` is stored as its log."""

    log_sigma: float
    kind = "gaussian"

    @classmethod
    def from_sigma(cls, sigma: float) -> "GaussianKernel":
        if sigma <= 0:
            raise ValueError("sigma must be positive")
        return cls(float(np.log(sigma)))

    @property
    def sigma(self) -> float:
        return float(np.exp(self.log_sigma))

    def parameters(self):
        return {"log_sigma": np.asarray(self.log_sigma, float)}

    def with_parameters(self, params):
        return replace(self, log_sigma=float(params["log_sigma"]))

    def gram(self, z):
        d = sqdist(z)
        k = d * (-0.5 / self.sigma)
        np.exp(k, out=k)
        return k, (d, k)

    def gram_backward(self, z, gk, cache):
        d, k = cache
        s = self.sigma
        gkk = gk * k
        dlog = np.vdot(gkk, d) / (2.0 * s)
        gkk *= -0.5 / s
        return sqdist_backward(z, gkk), {"log_sigma": np.asarray(dlog)}


@dataclass(frozen=True)
class DeepKernel(KernelModel):
    """[(1-gamma) exp(-|phi(x)-phi(y)|^2/(2 s_phi)) + gamma] exp(-|x-y|^2/(2 s_q))."""

    log_sigma_phi: float
    log_sigma_q: float
    gamma: float
    net: MlpParams
    kind = "deep"

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in [0, 1], got {self.gamma}")

    @property
    def sigma_phi(self) -> float:
        return float(np.exp(self.log_sigma_phi))

    @property
    def sigma_q(self) -> float:
        return float(np.exp(self.log_sigma_q))

    @property
    def n_in(self):
        return self.net.n_in

    def parameters(self):
        out = {
            "log_sigma_phi": np.asarray(self.log_sigma_phi, float),
            "log_sigma_q": np.asarray(self.log_sigma_q, float),
            "gamma": np.asarray(self.gamma, float),
        }
        out.update(self.net.to_dict())
        return out

    def with_parameters(self, params):
        return DeepKernel(
            float(params["log_sigma_phi"]),
            float(params["log_sigma_q"]),
            float(params["gamma"]),
            self.net.replace(params),
        )

    def gram(self, z):
        if z.shape[1] != self.net.n_in:
            raise DimensionError(f"samples have {z.shape[1]} features, network expects {self.net.n_in}")
        feats, pre = _forward_cache(self.net, z)
        d_phi = sqdist(feats)
        d_q = sqdist(z)
        k_phi = d_phi * (-0.5 / self.sigma_phi)
        np.exp(k_phi, out=k_phi)
        k_q = d_q * (-0.5 / self.sigma_q)
        np.exp(k_q, out=k_q)
        k = k_phi * (1.0 - self.gamma)
        k += self.gamma
        k *= k_q
        return k, (feats, pre, d_phi, d_q, k_phi, k_q, k)

    def gram_backward(self, z, gk, cache):
        feats, pre, d_phi, d_q, k_phi, k_q, k = cache
        g, sp, sq = self.gamma, self.sigma_phi, self.sigma_q
        g_kq = gk * k  # dL/dK * K = dL/dlog k_q, elementwise
        g_kphi = gk * k_q
        g_kphi *= k_phi
        # dK/dgamma = (1 - k_phi) k_q = k_q - k_phi k_q
        d_gamma = np.vdot(gk, k_q) - np.sum(g_kphi)
        g_kphi *= 1.0 - g
        grads = {
            "gamma": np.asarray(d_gamma),
            "log_sigma_phi": np.asarray(np.vdot(g_kphi, d_phi) / (2.0 * sp)),
            "log_sigma_q": np.asarray(np.vdot(g_kq, d_q) / (2.0 * sq)),
        }
        g_kphi *= -0.5 / sp
        net_grads, dz_net = mlp_backward(self.net, pre, sqdist_backward(feats, g_kphi))
        grads.update(net_grads)
        g_kq *= -0.5 / sq
        dz = dz_net + sqdist_backward(z, g_kq)
        return dz, grads


def c2st_sign_value(f_out, guard: float = SIGN_GUARD):
    """Smoothed sign factor f/(|f| + guard) + 1, in [0, 2]."""
    f_out = np.asarray(f_out, float)
    return f_out / (np.abs(f_out) + guard) + 1.0


@dataclass(frozen=True)
class C2STKernel(KernelModel):
    """Classifier-derived kernel from a scalar score network ``f``.

    ``sign=True``: k = (1/16)(f(x)/|f(x)| + 1)(f(y)/|f(y)| + 1) with a zero
    guard. ``sign=False``: k = f(x) f(y).
    """

    net: MlpParams
    sign: bool = True
    guard: float = SIGN_GUARD

    def __post_init__(self):
        if self.net.n_out != 1:
            raise DimensionError("classifier network must output one score")

    @property
    def kind(self):
        return "c2st_sign" if self.sign else "c2st_logit"

    @property
    def n_in(self):
        return self.net.n_in

    def parameters(self):
        return self.net.to_dict()

    def with_parameters(self, params):
        return replace(self, net=self.net.replace(params))

    def scores(self, z) -> np.ndarray:
        return _forward_cache(self.net, z)[0][:, 0]

    def gram(self, z):
        if z.shape[1] != self.net.n_in:
            raise DimensionError(f"samples have {z.shape[1]} features, network expects {self.net.n_in}")
        out, pre = _forward_cache(self.net, z)
        f = out[:, 0]
        if self.sign:
            u = c2st_sign_value(f, self.guard)
            k = np.outer(u, u) / 16.0
        else:
            u = f
            k = np.outer(u, u)
        return k, (f, u, pre)

    def gram_backward(self, z, gk, cache):
        f, u, pre = cache
        du = 2.0 * (gk @ u)
        if self.sign:
            du = du / 16.0 * self.guard / (np.abs(f) + self.guard) ** 2
        grads, dz = mlp_backward(self.net, pre, du[:, None])
        return dz, grads


def kernel_eval(model: KernelModel, x, y) -> float:
    x = np.asarray(x, float).ravel()
    y = np.asarray(y, float).ravel()
    if x.shape != y.shape:
        raise DimensionError(f"x has {x.size} entries, y has {y.size}")
    z = _check_samples(np.stack([x, y]))
    return float(model.gram(z)[0][0, 1])


def _pair(sp, sq):
    sp = _check_samples(sp)
    sq = _check_samples(sq)
    if sp.shape != sq.shape:
        raise DimensionError(f"sample sets differ in shape: {sp.shape} vs {sq.shape}")
    if sp.shape[0] < 2:
        raise InsufficientSamplesError("need at least two samples per set")
    return sp, sq


def h_forward(model: KernelModel, sp, sq):
    """H matrix plus the state needed by :func:`h_backward`."""
    sp, sq = _pair(sp, sq)
    n = sp.shape[0]
    z = np.vstack([sp, sq])
    k, cache = model.gram(z)
    kxx, kyy, kxy = k[:n, :n], k[n:, n:], k[:n, n:]
    h = kxx + kyy - kxy - kxy.T
    return h, (z, cache)


def h_backward(model: KernelModel, state, gh):
    """Gradients of ``sum(gh * H)`` w.r.t. (sp, sq) and kernel parameters."""
    z, cache = state
    n = z.shape[0] // 2
    # H only sees the symmetric part of gh; the pooled upstream is
    # [[S, -S], [-S, S]] with S = (gh + gh^T) / 2
    sym = gh + gh.T
    sym *= 0.5
    gz = np.empty((2 * n, 2 * n))
    gz[:n, :n] = sym
    gz[n:, n:] = sym
    np.negative(sym, out=gz[:n, n:])
    gz[n:, :n] = gz[:n, n:]
    dz, dparams = model.gram_backward(z, gz, cache)
    return dz[:n], dz[n:], dparams


def h_matrix(model: KernelModel, sp, sq) -> np.ndarray:
    return h_forward(model, sp, sq)[0]


def h_matrix_input_grad(model: KernelModel, sp, sq, upstream) -> np.ndarray:
    h, state = h_forward(model, sp, sq)
    upstream = np.asarray(upstream, float)
    if upstream.shape != h.shape:
        raise DimensionError(f"upstream {upstream.shape} != H {h.shape}")
    return h_backward(model, state, upstream)[1]


# -- construction helpers ----------------------------------------------------


def median_sqdist(z) -> float:
    d = sqdist(np.asarray(z, float))
    iu = np.triu_indices(d.shape[0], k=1)
    med = float(np.median(d[iu]))
    return med if med > 0 else 1.0


def make_deep_kernel(d: int, hidden: int, rng, n_layers: int = 4, gamma: float = 0.5,
                     sigma_phi: float = 1.0, sigma_q: float = 1.0) -> DeepKernel:
    net = init_mlp([d] + [hidden] * n_layers, rng)
    return DeepKernel(float(np.log(sigma_phi)), float(np.log(sigma_q)), gamma, net)


def make_classifier(d: int, hidden: int, rng, n_layers: int = 4, sign: bool = True) -> C2STKernel:
    # feature extractor of ``n_layers`` plus a two-layer head
    net = init_mlp([d] + [hidden] * (n_layers + 1) + [1], rng)
    return C2STKernel(net, sign=sign)
