import math

import numpy as np
import pytest

from rknlab.errors import NotPositiveDefinite
from rknlab.linalg import (cholesky, cholesky_psd, log_det_spd, spd_solve,
                           symmetrize)


def random_spd(rng, n, cond_scale=1.0):
    A = rng.standard_normal((n, n))
    return A @ A.T + cond_scale * np.eye(n)


def test_symmetrize():
    M = np.array([[1.0, 2.0], [0.0, 3.0]])
    S = symmetrize(M)
    assert np.array_equal(S, S.T)
    assert np.allclose(S, [[1.0, 1.0], [1.0, 3.0]])


def test_cholesky_known_factor():
    L = cholesky(np.array([[4.0, 2.0], [2.0, 3.0]]))
    assert np.allclose(L, [[2.0, 0.0], [1.0, math.sqrt(2.0)]])
    assert np.allclose(np.tril(L), L)


def test_cholesky_identity():
    assert np.array_equal(cholesky(np.eye(3)), np.eye(3))


def test_cholesky_rejects_indefinite():
    with pytest.raises(NotPositiveDefinite):
        cholesky(np.array([[1.0, 2.0], [2.0, 1.0]]))
    with pytest.raises(NotPositiveDefinite):
        cholesky(np.diag([1.0, -1.0]))


def test_cholesky_rejects_asymmetric():
    with pytest.raises(NotPositiveDefinite):
        cholesky(np.array([[1.0, 0.5], [0.0, 1.0]]))


def test_cholesky_property_random():
    rng = np.random.default_rng(0)
    for _ in range(50):
        M = random_spd(rng, 3)
        L = cholesky(M)
        assert np.allclose(L @ L.T, M, atol=1e-12 * abs(M).max())
        assert np.all(np.diag(L) > 0)


def test_cholesky_psd_rank_deficient():
    L = cholesky_psd(np.diag([1.0, 0.0]))
    assert np.allclose(L, np.diag([1.0, 0.0]))
    # A genuinely negative pivot must still raise.
    with pytest.raises(NotPositiveDefinite):
        cholesky_psd(np.diag([1.0, -1.0]))


def test_cholesky_psd_rank_one():
    v = np.array([3.0, 4.0])
    L = cholesky_psd(np.outer(v, v))
    assert np.allclose(L @ L.T, np.outer(v, v))


def test_spd_solve_examples():
    assert np.allclose(spd_solve(np.eye(2), np.array([1.0, 2.0])), [1.0, 2.0])
    x = spd_solve(np.diag([2.0, 4.0]), np.array([2.0, 4.0]))
    assert np.allclose(x, [1.0, 1.0])


def test_spd_solve_matrix_rhs_and_accuracy():
    rng = np.random.default_rng(1)
    for _ in range(25):
        M = random_spd(rng, 4)
        B = rng.standard_normal((4, 2))
        X = spd_solve(M, B)
        assert np.allclose(M @ X, B, atol=1e-9)


def test_spd_solve_rejects_indefinite():
    with pytest.raises(NotPositiveDefinite):
        spd_solve(np.diag([1.0, -1.0]), np.ones(2))


def test_log_det_examples():
    assert log_det_spd(np.eye(3)) == pytest.approx(0.0)
    assert log_det_spd(np.diag([2.0, 2.0])) == pytest.approx(math.log(4.0))


def test_log_det_matches_slogdet():
    rng = np.random.default_rng(2)
    for _ in range(25):
        M = random_spd(rng, 3)
        sign, expected = np.linalg.slogdet(M)
        assert sign == 1.0
        assert log_det_spd(M) == pytest.approx(expected, rel=1e-10)


def test_log_det_rejects_singular():
    with pytest.raises(NotPositiveDefinite):
        log_det_spd(np.diag([1.0, 0.0]))
