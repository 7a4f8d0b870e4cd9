import numpy as np
import pytest

from memosort.linalg import NotPositiveDefiniteError, matmul, outer, spd_inverse, spd_solve, symmetrize


def test_matmul_examples():
    m = np.arange(16.0).reshape(4, 4)
    assert np.array_equal(matmul(np.eye(4), m), m)
    assert matmul([[1, 2], [3, 4]], [[0, 1], [1, 0]]).tolist() == [[2, 1], [4, 3]]
    assert matmul([[1, 2, 3]], [[4], [5], [6]]).shape == (1, 1)
    with pytest.raises(ValueError):
        matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_spd_solve_examples():
    b = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(spd_solve(np.eye(2), b), b)
    x = spd_solve([[4.0, 0.0], [0.0, 9.0]], [[1.0], [1.0]])
    assert np.allclose(x, [[0.25], [1 / 9]], rtol=0, atol=1e-15)
    inv = spd_solve([[2.0, 1.0], [1.0, 2.0]], np.eye(2))
    assert np.allclose(inv, [[2 / 3, -1 / 3], [-1 / 3, 2 / 3]], rtol=0, atol=1e-15)


def test_spd_solve_rejects_indefinite():
    with pytest.raises(NotPositiveDefiniteError):
        spd_solve([[1.0, 2.0], [2.0, 1.0]], np.eye(2))
    with pytest.raises(NotPositiveDefiniteError):
        spd_solve([[np.nan, 0.0], [0.0, 1.0]], np.eye(2))
    # distinct from plain shape errors
    with pytest.raises(ValueError):
        spd_solve(np.eye(3), np.eye(2))


def test_spd_solve_recovers_random_systems(rng):
    for _ in range(200):
        n = int(rng.integers(1, 9))
        low = rng.normal(size=(n, n))
        a = low @ low.T + 1e-3 * np.eye(n)
        x = rng.normal(size=(n, 3))
        b = a @ x
        got = spd_solve(a, b)
        assert np.max(np.abs(a @ got - b)) < 1e-9 * max(1.0, np.max(np.abs(b)))
        cond = np.linalg.cond(a)
        assert np.max(np.abs(got - x)) < 1e-8 * max(1.0, cond * 1e-6)


def test_spd_solve_batched(rng):
    low = rng.normal(size=(5, 4, 4))
    a = low @ np.swapaxes(low, 1, 2) + np.eye(4)
    b = rng.normal(size=(5, 4, 2))
    x = spd_solve(a, b)
    for k in range(5):
        assert np.allclose(x[k], np.linalg.solve(a[k], b[k]), atol=1e-12)
    inv = spd_inverse(a)
    assert np.allclose(inv @ a, np.eye(4), atol=1e-12)
    assert np.array_equal(inv, np.swapaxes(inv, 1, 2))


def test_outer_examples(rng):
    assert np.array_equal(outer(np.zeros(3)), np.zeros((3, 3)))
    assert outer([1.0, 2.0]).tolist() == [[1, 2], [2, 4]]
    for _ in range(20):
        v = rng.normal(size=int(rng.integers(1, 8)))
        m = outer(v)
        assert np.array_equal(m, m.T)
        assert np.trace(m) == pytest.approx(v @ v)
        assert np.linalg.matrix_rank(m) == (1 if np.any(v) else 0)
        eig = np.linalg.eigvalsh(m)
        assert eig.max() == pytest.approx(v @ v)
        assert np.all(np.abs(eig[:-1]) < 1e-12 * max(1.0, v @ v))
    with pytest.raises(ValueError):
        outer(np.zeros(0))


def test_symmetrize():
    m = np.array([[1.0, 2.0], [4.0, 3.0]])
    assert symmetrize(m).tolist() == [[1, 3], [3, 3]]
