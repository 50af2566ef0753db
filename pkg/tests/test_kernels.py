import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from advtst.kernels import (
    C2STKernel,
    DeepKernel,
    GaussianKernel,
    InsufficientSamplesError,
    c2st_sign_value,
    h_matrix,
    h_matrix_input_grad,
    kernel_eval,
    sqdist,
)
from advtst.ndmath import DimensionError, NumericError, init_mlp
from helpers import VARIANTS, random_model, random_pair
from oracles import central_fd, gauss, h_brute, rel_err


def test_gaussian_self_similarity_is_one():
    assert kernel_eval(GaussianKernel.from_sigma(0.3), [1.0, 2.0], [1.0, 2.0]) == 1.0


def test_gaussian_value_at_unit_distance():
    k = GaussianKernel.from_sigma(0.5)
    assert kernel_eval(k, [0.0, 0.0], [1.0, 0.0]) == pytest.approx(0.36787944117144233, rel=1e-14)


def test_deep_with_gamma_one_is_raw_gaussian(rng):
    deep = DeepKernel(0.0, np.log(1.7), 1.0, init_mlp([3, 4, 4], rng))
    x, y = rng.standard_normal(3), rng.standard_normal(3)
    assert kernel_eval(deep, x, y) == pytest.approx(kernel_eval(GaussianKernel.from_sigma(1.7), x, y), rel=1e-14)


def test_sign_value_examples():
    assert c2st_sign_value(5.0) == pytest.approx(2.0)
    assert c2st_sign_value(-3.0) == pytest.approx(0.0, abs=1e-11)
    assert c2st_sign_value(0.0) == 1.0


def test_kernel_eval_errors(rng):
    k = GaussianKernel(0.0)
    with pytest.raises(DimensionError):
        kernel_eval(k, [1.0, 2.0], [1.0])
    with pytest.raises(NumericError):
        kernel_eval(k, [np.nan, 0.0], [0.0, 0.0])
    with pytest.raises(DimensionError):
        kernel_eval(random_model("deep", 3, rng), [1.0, 2.0], [1.0, 2.0])


@given(st.integers(0, 10_000), st.sampled_from(VARIANTS), st.integers(1, 4))
def test_kernels_are_symmetric(seed, variant, d):
    rng = np.random.default_rng(seed)
    m = random_model(variant, d, rng, smooth_sign=False)
    x, y = rng.standard_normal(d), rng.standard_normal(d)
    assert kernel_eval(m, x, y) == pytest.approx(kernel_eval(m, y, x), rel=1e-12, abs=1e-15)


@given(st.integers(0, 10_000), st.sampled_from(["gaussian", "deep"]), st.integers(1, 4))
def test_smooth_kernels_are_bounded(seed, variant, d):
    rng = np.random.default_rng(seed)
    m = random_model(variant, d, rng)
    v = kernel_eval(m, rng.standard_normal(d), 3 * rng.standard_normal(d))
    assert 0.0 <= v <= 1.0


@given(st.integers(0, 10_000))
def test_sign_kernel_bounded_by_quarter(seed):
    rng = np.random.default_rng(seed)
    m = random_model("c2st_sign", 2, rng, smooth_sign=False)
    v = kernel_eval(m, rng.standard_normal(2), rng.standard_normal(2))
    assert -1e-12 <= v <= 0.25 + 1e-12


@given(st.integers(0, 10_000), st.integers(2, 50), st.integers(1, 12))
def test_gaussian_gram_is_psd(seed, n, d):
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n, d))
    k = GaussianKernel.from_sigma(float(rng.uniform(0.1, 5))).gram(z)[0]
    assert np.linalg.eigvalsh(k).min() >= -1e-8


@given(st.integers(0, 10_000), st.integers(1, 12))
def test_sqdist_matches_pairwise_loop(seed, d):
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((6, d))
    ref = np.array([[np.sum((a - b) ** 2) for b in z] for a in z])
    np.testing.assert_allclose(sqdist(z), ref, rtol=1e-10, atol=1e-12)
    assert np.all(np.diag(sqdist(z)) == 0)


def test_h_of_identical_sets_is_zero(rng):
    sp = rng.standard_normal((5, 2))
    for v in VARIANTS:
        assert np.all(h_matrix(random_model(v, 2, rng), sp, sp.copy()) == 0.0)


def test_h_two_point_matches_four_evaluations(rng):
    sp, sq = random_pair(rng, 2, 3)
    ref = h_brute(lambda a, b: gauss(a, b, 0.8), sp.tolist(), sq.tolist())
    np.testing.assert_allclose(h_matrix(GaussianKernel.from_sigma(0.8), sp, sq), ref, rtol=1e-12)


@given(st.integers(0, 10_000), st.sampled_from(VARIANTS))
def test_h_symmetric_and_swap_invariant(seed, variant):
    rng = np.random.default_rng(seed)
    m = random_model(variant, 2, rng)
    sp, sq = random_pair(rng, 5, 2)
    h = h_matrix(m, sp, sq)
    np.testing.assert_allclose(h, h.T, atol=1e-14)
    np.testing.assert_allclose(h_matrix(m, sq, sp), h, atol=1e-14)


def test_h_needs_two_samples(rng):
    with pytest.raises(InsufficientSamplesError):
        h_matrix(GaussianKernel(0.0), np.zeros((1, 2)), np.ones((1, 2)))
    with pytest.raises(DimensionError):
        h_matrix(GaussianKernel(0.0), np.zeros((3, 2)), np.ones((4, 2)))


def test_zero_upstream_gives_zero_gradient(rng):
    sp, sq = random_pair(rng, 4, 2)
    for v in VARIANTS:
        g = h_matrix_input_grad(random_model(v, 2, rng), sp, sq, np.zeros((4, 4)))
        assert np.all(g == 0.0)


@given(st.integers(0, 10_000), st.sampled_from(VARIANTS), st.integers(1, 3))
def test_h_input_gradient_matches_fd(seed, variant, d):
    rng = np.random.default_rng(seed)
    m = random_model(variant, d, rng)
    sp, sq = random_pair(rng, 4, d)
    up = rng.standard_normal((4, 4))  # deliberately not symmetric
    got = h_matrix_input_grad(m, sp, sq, up)
    ref = central_fd(lambda y: np.sum(up * h_matrix(m, sp, y)), sq)
    assert rel_err(got, ref) < 1e-4


def test_gradient_decays_far_from_data(rng):
    sp, sq = random_pair(rng, 5, 2)
    k = GaussianKernel.from_sigma(0.5)
    up = np.ones((5, 5))
    mags = []
    for dist in (4.0, 6.0, 8.0):
        far = sq.copy()
        far[0] = dist
        mags.append(np.abs(h_matrix_input_grad(k, sp, far, up)[0]).max())
    # |grad| <= C exp(-(dist - spread)^2 / (2 sigma)) with spread ~ 3
    assert mags[0] > mags[1] > mags[2] > 0
    assert mags[2] < 100 * np.exp(-(8.0 * np.sqrt(2) - 4.0) ** 2)


def test_c2st_gram_is_outer_product(rng):
    m = random_model("c2st_logit", 3, rng)
    z = rng.standard_normal((6, 3))
    f = m.scores(z)
    np.testing.assert_allclose(m.gram(z)[0], np.outer(f, f), rtol=1e-13)
    assert isinstance(m, C2STKernel) and m.kind == "c2st_logit"
