"""Sparse multivariate polynomials as ``{multi-index: coefficient}`` maps."""
from __future__ import annotations

import itertools
import math

import numpy as np

MAX_DEGREE = 6


def normalize(coeffs: dict, dim: int | None = None) -> dict:
    out = {}
    for alpha, c in coeffs.items():
        alpha = tuple(int(a) for a in (alpha if isinstance(alpha, (tuple, list)) else (alpha,)))
        if dim is not None and len(alpha) != dim:
            raise ValueError(f"multi-index {alpha} does not have length {dim}")
        if any(a < 0 for a in alpha):
            raise ValueError(f"negative exponent in {alpha}")
        if c != 0:
            out[alpha] = out.get(alpha, 0) + c
    return {a: c for a, c in out.items() if c != 0}


def degree(coeffs: dict) -> int:
    return max((sum(a) for a in coeffs), default=0)


def evaluate(coeffs: dict, x) -> float:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    return float(sum(c * np.prod(x ** np.asarray(a)) for a, c in coeffs.items()))


def evaluate_many(coeffs: dict, xs: np.ndarray) -> np.ndarray:
    """Evaluate at the rows of ``xs`` (shape (N, d))."""
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    out = np.zeros(xs.shape[0])
    for a, c in coeffs.items():
        out += c * np.prod(xs ** np.asarray(a), axis=1)
    return out


def differentiate(coeffs: dict, beta) -> dict:
    """Coefficient map of the partial derivative of order ``beta``."""
    beta = tuple(int(b) for b in (beta if isinstance(beta, (tuple, list)) else (beta,)))
    out = {}
    for alpha, c in coeffs.items():
        if len(alpha) != len(beta):
            raise ValueError("multi-index length mismatch")
        if any(b > a for a, b in zip(alpha, beta)):
            continue
        factor = math.prod(math.perm(a, b) for a, b in zip(alpha, beta))
        key = tuple(a - b for a, b in zip(alpha, beta))
        out[key] = out.get(key, 0) + factor * c
    return {a: c for a, c in out.items() if c != 0}


def derivative_orders(coeffs: dict) -> list[tuple]:
    """All beta (including 0) for which the derivative of order beta is nonzero."""
    if not coeffs:
        return []
    dim = len(next(iter(coeffs)))
    top = [max(a[k] for a in coeffs) for k in range(dim)]
    return [b for b in itertools.product(*(range(t + 1) for t in top)) if differentiate(coeffs, b)]


def abs_bound(coeffs: dict, lower, upper) -> float:
    """Upper bound of |p| on a box: sum |c_a| prod max(|lo|, |hi|)^a."""
    r = np.maximum(np.abs(np.asarray(lower, float)), np.abs(np.asarray(upper, float)))
    return float(sum(abs(c) * np.prod(r ** np.asarray(a)) for a, c in coeffs.items()))
