import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from advtst.data import (
    BlobSpec,
    HdgmSpec,
    TableParseError,
    blob_deltas,
    blob_sampler,
    hdgm_sampler,
    load_table,
    sample_blob,
    sample_hdgm,
    table_sampler,
)


def test_blob_deltas_follow_the_mode_formula():
    d = blob_deltas()
    assert d[0] == pytest.approx(-0.02) and d[3] == pytest.approx(-0.026)
    assert d[4] == 0.0
    assert d[5] == pytest.approx(0.02) and d[8] == pytest.approx(0.026)


def test_blob_p_variance_by_total_variance():
    x = sample_blob(BlobSpec(), "P", 100_000, np.random.default_rng(0))
    # within-mode 0.03 plus variance of a uniform pick from {0, 1, 2}
    np.testing.assert_allclose(x.var(axis=0), 0.03 + 2 / 3, atol=0.02)


def test_blob_mode_frequencies_uniform():
    _, modes = sample_blob(BlobSpec(), "Q", 90_000, np.random.default_rng(1), return_modes=True)
    counts = np.bincount(modes, minlength=9)
    sd = np.sqrt(90_000 * (1 / 9) * (8 / 9))
    assert np.all(np.abs(counts - 10_000) < 3 * sd)


def test_blob_q_mode_five_matches_p():
    spec = BlobSpec()
    np.testing.assert_allclose(spec.chol_q[4], spec.chol_p)
    x, modes = sample_blob(spec, "Q", 90_000, np.random.default_rng(2), return_modes=True)
    for i in (0, 8):
        cov = np.cov(x[modes == i].T)
        assert cov[0, 1] == pytest.approx(spec.deltas[i], abs=3e-3)


def test_blob_rejects_indefinite_covariance():
    with pytest.raises(ValueError):
        BlobSpec(deltas=(0.05,) * 9)


def test_hdgm_cholesky_by_hand():
    np.testing.assert_allclose(HdgmSpec().chol_q[0], [[1, 0], [0.5, np.sqrt(0.75)]], rtol=1e-14)


def test_hdgm_mean_and_independent_tail():
    spec = HdgmSpec(d=5)
    x, modes = sample_hdgm(spec, "Q", 100_000, np.random.default_rng(3), return_modes=True)
    np.testing.assert_allclose(x.mean(0), 0.25, atol=0.02)
    one = x[modes == 0]
    for k in range(2, 5):
        assert abs(np.corrcoef(one[:, 0], one[:, k])[0, 1]) < 0.02
    assert np.corrcoef(one[:, 0], one[:, 1])[0, 1] == pytest.approx(0.5, abs=0.02)
    p = sample_hdgm(spec, "P", 100_000, np.random.default_rng(4))
    np.testing.assert_allclose(p.mean(0), 0.25, atol=0.02)


def test_hdgm_needs_two_dimensions():
    with pytest.raises(ValueError):
        HdgmSpec(d=1)


@given(st.integers(0, 2**32 - 1))
def test_samplers_are_deterministic(seed):
    a = blob_sampler()(7, np.random.default_rng(seed))
    b = blob_sampler()(7, np.random.default_rng(seed))
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(a[1], b[1])


def test_per_mode_sampler_scales_sizes():
    sp, sq = blob_sampler(per_mode=True)(4, np.random.default_rng(0))
    assert sp.shape == sq.shape == (36, 2)
    sp, sq = hdgm_sampler(HdgmSpec(d=3))(5, np.random.default_rng(0))
    assert sp.shape == (5, 3)


def test_null_sampler_draws_both_from_p():
    sp, sq = blob_sampler(null=True)(3000, np.random.default_rng(5))
    # P has zero within-mode correlation, Q's extreme modes do not
    assert stats.ks_2samp(sp[:, 0], sq[:, 0]).pvalue > 1e-3


def test_table_round_trip_and_selection(tmp_path):
    f = tmp_path / "t.csv"
    f.write_text("1.5,2,3\n-4,5e-1,6\n")
    np.testing.assert_array_equal(load_table(f), [[1.5, 2, 3], [-4, 0.5, 6]])
    g = tmp_path / "w.txt"
    g.write_text("# comment\n0 1 2 3\n\n4 5 6 7\n")
    assert load_table(g, columns=(0, 2)).shape == (2, 2)


def test_table_normalize_to_unit_interval(tmp_path):
    f = tmp_path / "t.csv"
    f.write_text("-2,7\n0,7\n2,7\n")
    x = load_table(f, normalize=True)
    np.testing.assert_allclose(x[:, 0], [-1, 0, 1])
    np.testing.assert_array_equal(x[:, 1], 0.0)


def test_table_errors_carry_line_numbers(tmp_path):
    f = tmp_path / "bad.csv"
    f.write_text("1,2\n3,x\n")
    with pytest.raises(TableParseError, match=":2:"):
        load_table(f)
    f.write_text("1,2\n3,4,5\n")
    with pytest.raises(TableParseError, match=":2:"):
        load_table(f)
    with pytest.raises(FileNotFoundError, match="nope"):
        load_table(tmp_path / "nope.csv")


def test_table_sampler_null_rows_are_disjoint():
    pool = np.arange(40, dtype=float)[:, None]
    sp, sq = table_sampler(pool, pool + 100, null=True)(10, np.random.default_rng(0))
    assert not set(sp.ravel()) & set(sq.ravel())
    sp, sq = table_sampler(pool, pool + 100)(10, np.random.default_rng(0))
    assert sq.min() >= 100
