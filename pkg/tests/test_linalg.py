import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from svlab import linalg
from svlab.linalg import DegenerateInputError


def test_l2_normalize_pythagorean():
    out = linalg.l2_normalize_rows(np.array([[3.0, 4.0]]))
    np.testing.assert_allclose(out, [[0.6, 0.8]], atol=1e-12)


def test_l2_normalize_identity_rows_unchanged():
    eye = np.eye(4)
    np.testing.assert_array_equal(linalg.l2_normalize_rows(eye), eye)


def test_l2_normalize_random_norms():
    rng = np.random.default_rng(0)
    out = linalg.l2_normalize_rows(rng.normal(size=(8, 4)))
    # oracle: recompute the norms directly
    norms = np.sqrt((out**2).sum(axis=1))
    np.testing.assert_allclose(norms, 1.0, atol=1e-9)


def test_l2_normalize_zero_row_names_index():
    batch = np.ones((3, 2))
    batch[1] = 0.0
    with pytest.raises(DegenerateInputError, match="index 1"):
        linalg.l2_normalize_rows(batch)


def test_cosine_identical_and_orthogonal():
    a = np.array([[1.0, 0.0]])
    b = np.array([[0.0, 1.0]])
    assert linalg.cosine_similarity_matrix(a, a)[0, 0] == pytest.approx(1.0)
    assert linalg.cosine_similarity_matrix(a, b)[0, 0] == pytest.approx(0.0, abs=1e-12)


def test_cosine_matches_double_loop_oracle():
    rng = np.random.default_rng(1)
    a = rng.normal(size=(5, 3))
    b = rng.normal(size=(4, 3))
    got = linalg.cosine_similarity_matrix(a, b)
    for i in range(5):
        for j in range(4):
            want = a[i] @ b[j] / (np.linalg.norm(a[i]) * np.linalg.norm(b[j]))
            assert got[i, j] == pytest.approx(want, abs=1e-12)


def test_cosine_dim_mismatch():
    with pytest.raises(ValueError, match="mismatch"):
        linalg.cosine_similarity_matrix(np.ones((2, 3)), np.ones((2, 4)))


def test_softmax_equal_logits_uniform():
    for tau in (0.01, 1.0, 10.0):
        p = linalg.temperature_softmax(np.full(5, 2.5), tau)
        np.testing.assert_allclose(p, 0.2, atol=1e-12)


def test_softmax_hand_value():
    p = linalg.temperature_softmax(np.array([0.0, np.log(3.0)]), 1.0)
    np.testing.assert_allclose(p, [0.25, 0.75], atol=1e-12)


def test_softmax_sharpening_limit():
    p = linalg.temperature_softmax(np.array([0.0, 1.0]), 0.01)
    assert p[1] > 1 - 1e-10


def test_softmax_rejects_bad_tau():
    with pytest.raises(ValueError):
        linalg.temperature_softmax(np.array([0.0, 1.0]), 0.0)


def test_entropy_uniform_large():
    p = np.full(65536, 1.0 / 65536)
    assert linalg.shannon_entropy(p) == pytest.approx(np.log(65536), abs=1e-9)
    assert linalg.shannon_entropy(p) == pytest.approx(11.09, abs=0.01)


def test_entropy_one_hot_and_hand_value():
    one_hot = np.zeros(7)
    one_hot[3] = 1.0
    assert linalg.shannon_entropy(one_hot) == 0.0
    # hand evaluation: -0.25 ln 0.25 - 0.75 ln 0.75
    assert linalg.shannon_entropy(np.array([0.25, 0.75])) == pytest.approx(
        0.5623, abs=1e-4
    )


def test_kl_basics():
    p = np.array([0.9, 0.1])
    assert linalg.kl_divergence(p, p) == pytest.approx(0.0, abs=1e-15)
    # q uniform: ln n - H(p)
    q = np.full(2, 0.5)
    assert linalg.kl_divergence(p, q) == pytest.approx(
        np.log(2) - linalg.shannon_entropy(p), abs=1e-12
    )
    assert linalg.kl_divergence(p, q) == pytest.approx(0.3681, abs=1e-4)


def test_kl_support_violation():
    with pytest.raises(DegenerateInputError):
        linalg.kl_divergence(np.array([0.5, 0.5]), np.array([1.0, 0.0]))


def test_covariance_constant_batch():
    out = linalg.covariance_matrix(np.ones((5, 3)) * 2.0)
    np.testing.assert_allclose(out, 0.0, atol=1e-15)


def test_covariance_one_active_dim():
    out = linalg.covariance_matrix(np.array([[1.0, 0.0], [-1.0, 0.0]]))
    np.testing.assert_allclose(out, [[2.0, 0.0], [0.0, 0.0]], atol=1e-15)


def test_covariance_matches_two_pass_oracle():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(16, 4))
    got = linalg.covariance_matrix(x)
    mu = x.mean(axis=0)
    want = np.zeros((4, 4))
    for i in range(16):
        want += np.outer(x[i] - mu, x[i] - mu)
    want /= 15
    np.testing.assert_allclose(got, want, atol=1e-10)
    np.testing.assert_allclose(got, got.T, atol=1e-12)


def test_cross_correlation_self_identity_when_standardized():
    rng = np.random.default_rng(3)
    z = rng.normal(size=(4000, 3))
    z = (z - z.mean(axis=0)) / z.std(axis=0)
    got = linalg.cross_correlation_matrix(z, z)
    np.testing.assert_allclose(got, np.eye(3), atol=2e-2)
    np.testing.assert_allclose(np.diag(got), 1.0, atol=1e-6)


def test_cross_correlation_self_diagonal_is_one():
    rng = np.random.default_rng(4)
    z = rng.normal(size=(10, 5))
    got = linalg.cross_correlation_matrix(z, z)
    np.testing.assert_allclose(np.diag(got), 1.0, atol=1e-9)


def test_cross_correlation_hand_oracle():
    z = np.array([[1.0, 2.0], [3.0, 5.0], [2.0, 0.0]])
    zp = np.array([[0.0, 1.0], [1.0, 4.0], [-1.0, 2.0]])
    eps = 1e-12
    want = np.zeros((2, 2))
    # spreadsheet-style: standardize each column of each branch, then average
    # products over rows
    zs = (z - z.mean(axis=0)) / (z.std(axis=0) + eps)
    zps = (zp - zp.mean(axis=0)) / (zp.std(axis=0) + eps)
    for d in range(2):
        for dp in range(2):
            want[d, dp] = np.mean([zs[b, d] * zps[b, dp] for b in range(3)])
    got = linalg.cross_correlation_matrix(z, zp, eps=eps)
    np.testing.assert_allclose(got, want, atol=1e-10)


def test_whiten_one_dim():
    rng = np.random.default_rng(5)
    x = rng.normal(loc=3.0, scale=2.0, size=(64, 1))
    out = linalg.whiten(x, eps=0.0)
    sigma = x.std(ddof=1)
    np.testing.assert_allclose(out.mean(), 0.0, atol=1e-12)
    np.testing.assert_allclose(
        np.abs(out[:, 0]), np.abs((x[:, 0] - x.mean()) / sigma), atol=1e-10
    )


def test_whiten_output_covariance_identity():
    rng = np.random.default_rng(6)
    x = rng.normal(size=(64, 8)) @ rng.normal(size=(8, 8))
    out = linalg.whiten(x, eps=0.0)
    np.testing.assert_allclose(linalg.covariance_matrix(out), np.eye(8), atol=1e-5)


def test_whiten_twice_still_identity():
    rng = np.random.default_rng(7)
    x = rng.normal(size=(40, 5))
    out = linalg.whiten(linalg.whiten(x, eps=0.0), eps=0.0)
    np.testing.assert_allclose(linalg.covariance_matrix(out), np.eye(5), atol=1e-5)


def test_whiten_rank_deficient_raises():
    x = np.zeros((10, 3))
    x[:, 0] = np.arange(10.0)  # two dead dimensions
    with pytest.raises(DegenerateInputError):
        linalg.whiten(x, eps=0.0)
    linalg.whiten(x, eps=1e-5)  # regularized path is fine


def test_sinkhorn_uniform_scores():
    out = linalg.sinkhorn_knopp(np.zeros((4, 6)), 0.05, 3)
    np.testing.assert_allclose(out, 1.0 / 24, atol=1e-12)


def test_sinkhorn_balanced_input_unchanged():
    rng = np.random.default_rng(8)
    b, p = 4, 6
    # build a positive matrix with exact marginals by running long sinkhorn
    a = np.exp(rng.normal(size=(b, p)))
    for _ in range(2000):
        a *= (1.0 / b) / a.sum(axis=1, keepdims=True)
        a *= (1.0 / p) / a.sum(axis=0, keepdims=True)
    scores = 0.05 * np.log(a)
    out = linalg.sinkhorn_knopp(scores, 0.05, 3)
    np.testing.assert_allclose(out, a, atol=1e-9)


def test_sinkhorn_marginals_random():
    # well-conditioned inputs: score spread comparable to a tenth of epsilon,
    # so the exponentiated matrix stays near-balanced and 3 sweeps suffice
    for seed in range(20):
        rng = np.random.default_rng(seed)
        scores = rng.normal(size=(4, 6)) * 0.005
        out = linalg.sinkhorn_knopp(scores, 0.05, 3)
        assert np.all(out >= 0)
        # oracle: recompute marginal sums directly
        row_dev = np.abs(out.sum(axis=1) - 1.0 / 4).max()
        col_dev = np.abs(out.sum(axis=0) - 1.0 / 6).max()
        assert row_dev < 1e-6
        assert col_dev < 1e-6


def test_sinkhorn_monotone_marginal_convergence():
    rng = np.random.default_rng(10)
    scores = rng.normal(size=(6, 9))
    devs = []
    for iters in range(1, 8):
        out = linalg.sinkhorn_knopp(scores, 0.5, iters)
        dev = np.abs(out.sum(axis=1) - 1.0 / 6).max() + np.abs(
            out.sum(axis=0) - 1.0 / 9
        ).max()
        devs.append(dev)
    assert all(b <= a + 1e-12 for a, b in zip(devs, devs[1:]))


@settings(max_examples=50, deadline=None)
@given(
    logits=st.lists(
        st.floats(min_value=-10, max_value=10, allow_nan=False), min_size=2, max_size=8
    )
)
def test_entropy_nondecreasing_in_temperature(logits):
    logits = np.asarray(logits)
    taus = [0.01, 0.03, 0.05, 0.07, 0.1, 0.5, 1.0]
    ents = [
        linalg.shannon_entropy(linalg.temperature_softmax(logits, t)) for t in taus
    ]
    assert all(b >= a - 1e-9 for a, b in zip(ents, ents[1:]))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(min_value=0, max_value=10_000))
def test_cosine_self_unit_diagonal(seed):
    rng = np.random.default_rng(seed)
    a = linalg.l2_normalize_rows(rng.normal(size=(5, 4)) + 0.1)
    got = linalg.cosine_similarity_matrix(a, a)
    np.testing.assert_allclose(np.diag(got), 1.0, atol=1e-9)
