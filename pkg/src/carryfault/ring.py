"""Unmasked ring and coding primitives over Z_M[X]/(X^n + 1).

Polynomials are numpy integer arrays whose last axis holds the n
coefficients; leading axes are batch dimensions. Canonical coefficients
live in [0, M). Signed quantities (CBD samples, noise, deltas) are kept as
plain signed integers and reduced only when they enter the ring.
"""
from __future__ import annotations

from math import comb

import numpy as np

from .errors import StructuralError
from .rng import DeterministicRng


def _check_pair(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape[-1] != b.shape[-1]:
        raise StructuralError(f"ring degree mismatch: {a.shape[-1]} vs {b.shape[-1]}")


def poly_add(a, b, M: int) -> np.ndarray:
    a, b = np.asarray(a, dtype=np.int64), np.asarray(b, dtype=np.int64)
    _check_pair(a, b)
    return (a + b) % M


def poly_sub(a, b, M: int) -> np.ndarray:
    a, b = np.asarray(a, dtype=np.int64), np.asarray(b, dtype=np.int64)
    _check_pair(a, b)
    return (a - b) % M


def poly_mul_negacyclic(a, b, M: int | None) -> np.ndarray:
    """Schoolbook product of two polynomials reduced by X^n + 1.

    ``M=None`` keeps the exact signed integer result.
    """
    a, b = np.asarray(a, dtype=np.int64), np.asarray(b, dtype=np.int64)
    if a.ndim != 1 or b.ndim != 1:
        raise StructuralError("poly_mul_negacyclic expects single polynomials")
    _check_pair(a, b)
    n = a.shape[0]
    full = np.convolve(a, b)
    out = full[:n].copy()
    out[: n - 1] -= full[n:]
    return out if M is None else out % M


def negacyclic_matrix(a) -> np.ndarray:
    """Matrix T with T @ b == a * b mod (X^n + 1) for every b."""
    a = np.asarray(a, dtype=np.int64)
    n = a.shape[-1]
    i = np.arange(n)[:, None]
    j = np.arange(n)[None, :]
    diff = i - j
    sign = np.where(diff >= 0, 1, -1)
    return a[..., diff % n] * sign


def centered(x, M: int) -> np.ndarray:
    """Representative of x mod M in (-M/2, M/2]."""
    r = np.asarray(x, dtype=np.int64) % M
    return np.where(r > M // 2, r - M, r)


def cbd_pmf(eta: int) -> np.ndarray:
    """Exact CBD(eta) probabilities over the support [-eta, eta]."""
    return np.array([comb(2 * eta, v + eta) for v in range(-eta, eta + 1)], dtype=float) / 4**eta


def cbd_from_words(x, y, eta: int) -> np.ndarray:
    mask = (1 << eta) - 1
    x = np.asarray(x, dtype=np.uint64) & np.uint64(mask)
    y = np.asarray(y, dtype=np.uint64) & np.uint64(mask)
    return np.bitwise_count(x).astype(np.int64) - np.bitwise_count(y).astype(np.int64)


def cbd_sample(eta: int, rng: DeterministicRng, size=None) -> np.ndarray:
    """HW(x) - HW(y) for independent uniform eta-bit strings x, y."""
    if eta < 1:
        raise StructuralError("eta must be >= 1")
    x = rng.words(eta, size)
    y = rng.words(eta, size)
    return cbd_from_words(x, y, eta)


# Rounding below is half-up, done in exact integer arithmetic.

def compress(v, target: int, q: int) -> np.ndarray:
    v = np.asarray(v, dtype=np.int64)
    return ((2 * target * v + q) // (2 * q)) % target


def decompress(v, source: int, q: int) -> np.ndarray:
    v = np.asarray(v, dtype=np.int64)
    return (2 * q * v + source) // (2 * source)


def half_round(q: int) -> int:
    """round(q/2) with ties up."""
    return (q + 1) // 2


def encode_bit(m, q: int) -> np.ndarray:
    return np.asarray(m, dtype=np.int64) * half_round(q)


def decode_bit(c, q: int) -> np.ndarray:
    c = np.asarray(c, dtype=np.int64)
    return ((2 * c + half_round(q)) // q) & 1
