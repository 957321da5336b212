"""Numeric primitives shared across the library.

Everything is float64. Probabilities are clamped to [PROB_EPS, 1 - PROB_EPS]
only where a logarithm is about to be taken; sampling and score-function
terms use the unclamped sigmoid.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

PROB_EPS = 1e-12


def sigmoid(x: np.ndarray) -> np.ndarray:
    return expit(x)


def sigmoid_prime(x: np.ndarray) -> np.ndarray:
    s = expit(x)
    return s * (1.0 - s)


def clamp_prob(p: np.ndarray) -> np.ndarray:
    return np.clip(p, PROB_EPS, 1.0 - PROB_EPS)


def log_sigmoid_clamped(x: np.ndarray) -> np.ndarray:
    """log(sigmoid(x)) with the probability clamped away from 0 and 1."""
    return np.log(clamp_prob(expit(x)))


def log_sum_exp(v: np.ndarray, axis=None) -> np.ndarray:
    """Stable log(sum(exp(v))). Exact (returns v) on singleton reductions."""
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        raise ValueError("log_sum_exp of an empty array")
    m = np.max(v, axis=axis, keepdims=True)
    out = m + np.log(np.sum(np.exp(v - m), axis=axis, keepdims=True))
    if axis is None:
        return float(out.reshape(()))
    return np.squeeze(out, axis=axis)


def softmax(v: np.ndarray, axis: int = -1) -> np.ndarray:
    """exp(v) normalized along axis; rows sum to 1 up to float64 rounding."""
    v = np.asarray(v, dtype=np.float64)
    m = np.max(v, axis=axis, keepdims=True)
    e = np.exp(v - m)
    return e / np.sum(e, axis=axis, keepdims=True)


def log_softmax(v: np.ndarray, axis: int = -1) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    m = np.max(v, axis=axis, keepdims=True)
    shifted = v - m
    return shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))


def logit(p) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    return np.log(p) - np.log1p(-p)
