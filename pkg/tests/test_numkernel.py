"""
Tests for the dense numeric kernels.
"""

import math

import numpy as np
import pytest

from redundancy_lens.errors import DegenerateRowError, ParameterError, ShapeError
from redundancy_lens.model import causal_mask
from redundancy_lens.numkernel import (
    AttentionMask,
    activation,
    log_softmax_rows,
    masked_softmax_rows,
    matmul,
    rms_norm,
)


def test_matmul_identity() -> None:
    """Multiplying by the identity leaves the matrix unchanged."""
    a = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(matmul(a, np.eye(2)), a)


def test_matmul_hand_product() -> None:
    b = np.array([[1.0, 0.0, -1.0], [0.0, 2.0, 1.0]])
    result = matmul(np.array([[1.0, 1.0]]), b)
    assert np.array_equal(result, np.array([[1.0, 2.0, 0.0]]))


def test_matmul_zero_annihilates() -> None:
    rng = np.random.default_rng(0)
    a = rng.normal(size=(3, 4))
    assert np.array_equal(matmul(a, np.zeros((4, 5))), np.zeros((3, 5)))


def test_matmul_shape_mismatch() -> None:
    with pytest.raises(ShapeError):
        matmul(np.zeros((2, 3)), np.zeros((2, 3)))


def test_matmul_rows_independent_of_batch() -> None:
    """A row subset multiplies to bitwise the same rows as the full matrix."""
    rng = np.random.default_rng(1)
    a = rng.normal(size=(9, 7))
    b = rng.normal(size=(7, 5))
    rows = np.array([1, 4, 8])
    assert np.array_equal(matmul(a[rows], b), matmul(a, b)[rows])


def test_masked_softmax_rows_examples() -> None:
    """Single survivor, hand softmax and uniform rows of one causal mask."""
    scores = np.array(
        [
            [1.0, 1.0, 1.0],
            [math.log(2.0), math.log(1.0), 0.0],
            [0.0, 0.0, 0.0],
        ]
    )
    probs = masked_softmax_rows(scores, causal_mask(3))
    assert np.array_equal(probs[0], [1.0, 0.0, 0.0])
    assert np.allclose(probs[1], [2 / 3, 1 / 3, 0.0], atol=1e-15)
    assert np.allclose(probs[2], [1 / 3, 1 / 3, 1 / 3], atol=1e-15)


def test_masked_softmax_rows_empty_row() -> None:
    allowed = np.array([[True, False], [False, False]])
    with pytest.raises(DegenerateRowError):
        masked_softmax_rows(np.zeros((2, 2)), allowed)


def test_masked_softmax_rows_large_scores_stay_finite() -> None:
    probs = masked_softmax_rows(np.array([[1000.0, 0.0], [1e4, -1e4]]), causal_mask(2))
    assert np.isfinite(probs).all()
    assert np.allclose(probs.sum(axis=1), 1.0)


def test_attention_mask_invariants() -> None:
    """Masks must be square, causal and allow the diagonal."""
    with pytest.raises(ShapeError):
        AttentionMask(np.ones((2, 3), dtype=bool))
    with pytest.raises(ParameterError):
        AttentionMask(np.array([[True, True], [True, True]]))
    with pytest.raises(ParameterError):
        AttentionMask(np.array([[False, False], [True, True]]))


def test_causal_mask_pairs() -> None:
    assert causal_mask(1).allowed.tolist() == [[True]]
    assert causal_mask(3).pair_count() == 6
    assert causal_mask(4).pair_count() == 10


def test_rms_norm_examples() -> None:
    assert np.array_equal(rms_norm(np.zeros((1, 3)), np.ones(3)), np.zeros((1, 3)))
    out = rms_norm(np.array([[3.0, 4.0]]), np.ones(2))
    assert np.allclose(out, np.array([[3.0, 4.0]]) / math.sqrt(12.5 + 1e-6))
    zeroed = rms_norm(np.array([[3.0, 4.0]]), np.zeros(2))
    assert np.array_equal(zeroed, np.zeros((1, 2)))


def test_rms_norm_gain_mismatch() -> None:
    with pytest.raises(ShapeError):
        rms_norm(np.ones((2, 3)), np.ones(2))


def test_activation_examples() -> None:
    relu = activation(np.array([-1.0, 0.0, 2.0]), "relu")
    assert np.array_equal(relu, [0.0, 0.0, 2.0])
    assert activation(np.array([0.0]), "silu")[0] == 0.0
    assert activation(np.array([1.0]), "silu")[0] == pytest.approx(
        1.0 / (1.0 + math.exp(-1.0)), abs=1e-12
    )


def test_activation_silu_extremes_finite() -> None:
    out = activation(np.array([-1000.0, 1000.0]), "silu")
    assert np.isfinite(out).all()
    assert out[1] == pytest.approx(1000.0)


def test_activation_unknown() -> None:
    with pytest.raises(ParameterError):
        activation(np.zeros(2), "tanh")  # type: ignore[arg-type]


def test_log_softmax_rows_normalised() -> None:
    rng = np.random.default_rng(2)
    out = log_softmax_rows(rng.normal(size=(4, 6)))
    assert np.allclose(np.exp(out).sum(axis=1), 1.0)


def test_causal_softmax_matches_reference() -> None:
    rng = np.random.default_rng(8)
    for n in range(1, 20):
        scores = rng.normal(scale=3.0, size=(n, n))
        expected = np.zeros((n, n))
        for q in range(n):
            row = scores[q, : q + 1]
            weights = np.exp(row - row.max())
            expected[q, : q + 1] = weights / weights.sum()
        result = masked_softmax_rows(scores, causal_mask(n))
        assert np.max(np.abs(result - expected)) <= 1e-12
