import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from advtst.data import BlobSpec, sample_blob
from advtst.kernels import GaussianKernel, InsufficientSamplesError, h_matrix, make_deep_kernel
from advtst.mmd import (
    CriterionConfig,
    criterion,
    criterion_and_grads,
    criterion_from_h,
    criterion_input_grad,
    criterion_param_grad,
    mmd_u,
    variance_hat,
)
from helpers import VARIANTS, random_model, random_pair
from oracles import central_fd, gauss, h_brute, mmd_u_brute, rel_err, variance_brute  # noqa: F401

CFG = CriterionConfig()


def test_mmd_u_trivial_cases():
    assert mmd_u(np.zeros((4, 4))) == 0.0
    h = np.ones((3, 3)) + 5 * np.eye(3)
    assert mmd_u(h) == 1.0
    with pytest.raises(InsufficientSamplesError):
        mmd_u(np.ones((1, 1)))


def test_variance_of_zero_and_constant_h_is_lambda():
    assert variance_hat(np.zeros((5, 5)), CriterionConfig(3e-7)) == 3e-7
    assert variance_hat(np.full((6, 6), 0.7), CFG) == pytest.approx(1e-8, abs=1e-15)


@given(st.integers(0, 10_000), st.integers(2, 12))
def test_mmd_and_variance_match_loops(seed, n):
    rng = np.random.default_rng(seed)
    sp, sq = random_pair(rng, n, 2)
    h = h_brute(lambda a, b: gauss(a, b, 1.3), sp.tolist(), sq.tolist())
    assert mmd_u(h) == pytest.approx(mmd_u_brute(h), rel=1e-12, abs=1e-15)
    assert variance_hat(h, CFG) == pytest.approx(variance_brute(h, 1e-8), rel=1e-12)


@given(st.integers(0, 10_000), st.integers(2, 12))
def test_leading_variance_terms_nonnegative(seed, n):
    rng = np.random.default_rng(seed)
    sp, sq = random_pair(rng, n, 3)
    h = h_matrix(GaussianKernel.from_sigma(1.0), sp, sq)
    assert variance_hat(h, CFG) >= 1e-8 - 1e-12


def test_identical_sets_give_zero_criterion(rng):
    sp = rng.standard_normal((6, 2))
    assert criterion(GaussianKernel(0.0), sp, sp.copy(), CFG) == 0.0


def test_separated_pair_scores_higher(rng):
    spec = BlobSpec()
    sp = sample_blob(spec, "P", 60, rng)
    same = sample_blob(spec, "P", 60, rng)
    far = same + 1.5
    k = GaussianKernel.from_sigma(0.1)
    assert criterion(k, sp, far, CFG) > criterion(k, sp, same, CFG)


@given(st.integers(0, 10_000), st.sampled_from(VARIANTS))
def test_criterion_permutation_invariant_and_symmetric(seed, variant):
    rng = np.random.default_rng(seed)
    m = random_model(variant, 2, rng)
    sp, sq = random_pair(rng, 7, 2)
    perm = rng.permutation(7)
    base = criterion(m, sp, sq, CFG)
    assert criterion(m, sp[perm], sq[perm], CFG) == pytest.approx(base, rel=1e-10, abs=1e-12)
    hs = h_matrix(m, sp, sq)
    assert mmd_u(h_matrix(m, sq, sp)) == pytest.approx(mmd_u(hs), rel=1e-12, abs=1e-15)


@given(st.integers(0, 10_000))
def test_larger_lambda_shrinks_criterion(seed):
    rng = np.random.default_rng(seed)
    sp, sq = random_pair(rng, 6, 2, shift=1.0)
    h = h_matrix(GaussianKernel.from_sigma(1.0), sp, sq)
    small, big = criterion_from_h(h, CriterionConfig(1e-4)), criterion_from_h(h, CriterionConfig(2e-4))
    assert abs(big) < abs(small)


def test_identical_sets_gradient_is_finite_and_matches_fd(rng):
    sp = rng.standard_normal((5, 2))
    k = GaussianKernel.from_sigma(0.8)
    g = criterion_input_grad(k, sp, sp.copy(), CFG)
    assert np.all(np.isfinite(g))
    # first-order terms cancel at S_Q = S_P, so both sides are ~0
    ref = central_fd(lambda y: criterion(k, sp, y, CFG), sp.copy(), step=1e-7)
    assert np.max(np.abs(g)) < 1e-10
    np.testing.assert_allclose(g, ref, atol=1e-5)


def test_gamma_one_freezes_network_gradient(rng):
    m = make_deep_kernel(2, 4, rng, n_layers=2, gamma=1.0)
    sp, sq = random_pair(rng, 6, 2)
    grads = criterion_param_grad(m, sp, sq, CFG)
    for key, val in grads.items():
        if key.startswith("net."):
            assert np.all(val == 0.0), key


def test_identical_sets_parameter_gradient_is_zero(rng):
    sp = rng.standard_normal((5, 2))
    grads = criterion_param_grad(GaussianKernel(0.3), sp, sp.copy(), CFG)
    assert abs(float(grads["log_sigma"])) < 1e-12


def test_rank_one_path_agrees_with_generic_h(rng):
    # classifier kernels use a closed form; compare against the H route
    from advtst.kernels import h_backward, h_forward
    from advtst.mmd import criterion_h_grad

    for variant in ("c2st_logit", "c2st_sign"):
        m = random_model(variant, 3, rng)
        sp, sq = random_pair(rng, 9, 3)
        value, dsp, dsq, dpar = criterion_and_grads(m, sp, sq, CFG)
        h, state = h_forward(m, sp, sq)
        v2, gh = criterion_h_grad(h, CFG)
        dsp2, dsq2, dpar2 = h_backward(m, state, gh)
        assert value == pytest.approx(v2, rel=1e-10)
        assert rel_err(dsq, dsq2) < 1e-9 and rel_err(dsp, dsp2) < 1e-9
        for key in dpar:
            assert rel_err(dpar[key], dpar2[key]) < 1e-9


def test_mmd_unbiased_under_null():
    # mean over many identical-distribution pairs within 3 standard errors of 0
    rng = np.random.default_rng(7)
    k = GaussianKernel.from_sigma(1.0)
    vals = np.array([mmd_u(h_matrix(k, rng.standard_normal((10, 2)), rng.standard_normal((10, 2))))
                     for _ in range(2000)])
    assert abs(vals.mean()) < 3 * vals.std(ddof=1) / np.sqrt(len(vals))
