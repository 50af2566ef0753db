"""Random model factories shared by several test files."""

import numpy as np

from advtst.kernels import C2STKernel, GaussianKernel, make_deep_kernel
from advtst.ndmath import init_mlp

VARIANTS = ("gaussian", "deep", "c2st_sign", "c2st_logit")


def random_model(variant, d, rng, hidden=5, smooth_sign=True):
    if variant == "gaussian":
        return GaussianKernel.from_sigma(float(rng.uniform(0.3, 3.0)))
    if variant == "deep":
        return make_deep_kernel(d, hidden, rng, n_layers=2, gamma=float(rng.uniform(0.1, 0.9)),
                                sigma_phi=float(rng.uniform(0.5, 2.0)), sigma_q=float(rng.uniform(0.5, 4.0)))
    net = init_mlp([d, hidden, hidden, 1], rng)
    # a large guard keeps the smoothed sign differentiable for finite differences
    guard = 1.0 if smooth_sign else 1e-12
    return C2STKernel(net, sign=variant == "c2st_sign", guard=guard)


def random_pair(rng, n, d, shift=0.5):
    return rng.standard_normal((n, d)), rng.standard_normal((n, d)) + shift
