"""Dense numeric kernels for the toy model.

Everything runs in float64. ``matmul`` accumulates over the inner dimension
strictly left to right, so a row of the product depends only on the matching
row of the left operand: multiplying a row subset gives bitwise the same rows
as multiplying the whole matrix.
"""

from dataclasses import dataclass
from typing import Literal, Union

import numpy as np

from redundancy_lens.errors import DegenerateRowError, ParameterError, ShapeError

Matrix = np.ndarray
ActivationKind = Literal["relu", "silu"]

RMS_EPS = 1e-6


@dataclass(frozen=True)
class AttentionMask:
    """Boolean attention table; ``allowed[q, k]`` means query q may attend key k."""

    allowed: np.ndarray

    def __post_init__(self) -> None:
        allowed = np.asarray(self.allowed, dtype=bool)
        if allowed.ndim != 2 or allowed.shape[0] != allowed.shape[1]:
            raise ShapeError(f"attention mask must be square, got {allowed.shape}")
        if not allowed.diagonal().all():
            raise ParameterError("attention mask must allow every query to see itself")
        if np.triu(allowed, k=1).any():
            raise ParameterError("attention mask must be causal")
        object.__setattr__(self, "allowed", allowed)

    @property
    def n(self) -> int:
        return int(self.allowed.shape[0])

    def pair_count(self) -> int:
        return int(np.count_nonzero(self.allowed))


def as_matrix(x: np.ndarray) -> Matrix:
    m = np.asarray(x, dtype=np.float64)
    if m.ndim == 1:
        m = m.reshape(1, -1)
    if m.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got {m.ndim} dimensions")
    return m


def matmul(a: Matrix, b: Matrix) -> Matrix:
    """Multiply two matrices with a fixed summation order.

    Args:
        a: Left operand, shape (n, k)
        b: Right operand, shape (k, m)

    Returns:
        The (n, m) product, accumulated over k from left to right
    """
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    out = np.zeros((a.shape[0], b.shape[1]), dtype=np.float64)
    for k in range(a.shape[1]):
        out += np.outer(a[:, k], b[k])
    return out


def masked_softmax_rows(
    scores: Matrix, mask: Union[AttentionMask, np.ndarray]
) -> Matrix:
    """Softmax each row over the allowed entries; disallowed entries are 0.

    Args:
        scores: Score matrix
        mask: Attention mask, or a plain boolean table of the same shape

    Returns:
        Row-stochastic matrix with zeros outside the mask
    """
    scores = as_matrix(scores)
    allowed = (
        mask.allowed
        if isinstance(mask, AttentionMask)
        else np.asarray(mask, dtype=bool)
    )
    if scores.shape != allowed.shape:
        raise ShapeError(f"scores {scores.shape} do not match mask {allowed.shape}")
    empty = np.flatnonzero(~allowed.any(axis=1))
    if empty.size:
        raise DegenerateRowError(f"row {int(empty[0])} has no allowed entry")
    masked = np.where(allowed, scores, -np.inf)
    peak = masked.max(axis=1, keepdims=True)
    weights = np.where(allowed, np.exp(masked - peak), 0.0)
    return weights / weights.sum(axis=1, keepdims=True)


def rms_norm(x: Matrix, gain: np.ndarray) -> Matrix:
    x = as_matrix(x)
    gain = np.asarray(gain, dtype=np.float64)
    if gain.shape != (x.shape[1],):
        raise ShapeError(f"gain of length {gain.shape} does not match {x.shape[1]}")
    scale = 1.0 / np.sqrt(np.mean(x * x, axis=1, keepdims=True) + RMS_EPS)
    return x * scale * gain


def activation(x: Matrix, kind: ActivationKind) -> Matrix:
    x = np.asarray(x, dtype=np.float64)
    if kind == "relu":
        return np.maximum(x, 0.0)
    if kind == "silu":
        # x * sigmoid(x), with sigmoid written to avoid exp overflow
        return x * np.exp(-np.logaddexp(0.0, -x))
    raise ParameterError(f"unknown activation: {kind}")


def log_softmax_rows(x: Matrix) -> Matrix:
    x = as_matrix(x)
    shifted = x - x.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
