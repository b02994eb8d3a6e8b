"""Arithmetic/Boolean sharing, carry-chain gadgets and masked decoding.

Shares are stacked along axis 0 of an int64 array; any trailing axes are
batch dimensions processed element-wise, so one call can decode a whole
polynomial or a batch of ciphertext coefficients. Bit positions are
1-based in the public API (bit j has value 2^(j-1)).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import StructuralError
from .params import SchemeParams
from .rng import DeterministicRng

FaultHook = Callable[[np.ndarray], np.ndarray]


@dataclass
class ArithShares:
    shares: np.ndarray
    modulus: int

    @property
    def order(self) -> int:
        return self.shares.shape[0] - 1

    @property
    def width(self) -> Optional[int]:
        m = self.modulus
        return m.bit_length() - 1 if m & (m - 1) == 0 else None

    def unmask(self) -> np.ndarray:
        return self.shares.sum(axis=0) % self.modulus


@dataclass
class BoolShares:
    shares: np.ndarray
    width: int

    @property
    def order(self) -> int:
        return self.shares.shape[0] - 1

    def unmask(self) -> np.ndarray:
        return np.bitwise_xor.reduce(self.shares, axis=0)


@dataclass
class MaskedDecodeTrace:
    unmasked_g: np.ndarray
    faulted_share_before: np.ndarray
    faulted_share_after: np.ndarray
    activation: np.ndarray
    output_bit_shares: BoolShares


def arith_share(v, order: int, M: int, rng: DeterministicRng) -> ArithShares:
    """Split v into order+1 shares summing to v mod M."""
    if order < 1:
        raise StructuralError("masking order must be >= 1")
    v = np.asarray(v, dtype=np.int64) % M
    shares = np.empty((order + 1,) + v.shape, dtype=np.int64)
    shares[:order] = rng.uniform(M, (order,) + v.shape)
    shares[order] = (v - shares[:order].sum(axis=0)) % M
    return ArithShares(shares, M)


def bool_share(v, order: int, width: int, rng: DeterministicRng) -> BoolShares:
    v = np.asarray(v, dtype=np.int64)
    shares = np.empty((order + 1,) + v.shape, dtype=np.int64)
    shares[:order] = rng.words(width, (order,) + v.shape)
    shares[order] = v ^ np.bitwise_xor.reduce(shares[:order], axis=0)
    return BoolShares(shares, width)


def _sec_and_raw(x: np.ndarray, y: np.ndarray, width: int, rng: DeterministicRng) -> np.ndarray:
    n = x.shape[0]
    z = x & y
    for i in range(n - 1):
        for j in range(i + 1, n):
            r_ij = rng.words(width, x.shape[1:])
            r_ji = ((x[i] & y[j]) ^ r_ij) ^ (x[j] & y[i])
            z[i] ^= r_ij
            z[j] ^= r_ji
    return z


def sec_and(x: BoolShares, y: BoolShares, rng: DeterministicRng) -> BoolShares:
    if x.shares.shape[0] != y.shares.shape[0]:
        raise StructuralError("sec_and: share counts differ")
    if x.width != y.width:
        raise StructuralError("sec_and: widths differ")
    return BoolShares(_sec_and_raw(x.shares, y.shares, x.width, rng), x.width)


def refresh_xor(x: BoolShares, target_order: int, rng: DeterministicRng) -> BoolShares:
    """Expand to target_order+1 shares and re-randomise every pair."""
    m = x.shares.shape[0]
    n = target_order + 1
    if m > n:
        raise StructuralError("refresh_xor cannot reduce the number of shares")
    y = np.zeros((n,) + x.shares.shape[1:], dtype=np.int64)
    y[:m] = x.shares
    for i in range(n - 1):
        for j in range(i + 1, n):
            r = rng.words(x.width, x.shares.shape[1:])
            y[i] ^= r
            y[j] ^= r
    return BoolShares(y, x.width)


def sec_add(u: BoolShares, v: BoolShares, k: int, rng: DeterministicRng,
            return_carries: bool = False):
    """Masked ripple-carry addition mod 2^k over Boolean shares.

    The carry into bit j+1 is xy ^ xc ^ yc of bit j, each product computed
    with SecAnd on 1-bit shares. With ``return_carries`` the shared carry
    word (bit j holds the carry into bit j) is returned as well.
    """
    if u.shares.shape != v.shares.shape:
        raise StructuralError("sec_add: operand share arrays differ in shape")
    x, y = u.shares, v.shares
    c = np.zeros_like(x)
    for j in range(k - 1):
        xj = (x >> j) & 1
        yj = (y >> j) & 1
        cj = (c >> j) & 1
        xy = _sec_and_raw(xj, yj, 1, rng)
        xc = _sec_and_raw(xj, cj, 1, rng)
        yc = _sec_and_raw(yj, cj, 1, rng)
        c |= (xy ^ xc ^ yc) << (j + 1)
    mask = (1 << k) - 1
    z = BoolShares((x ^ y ^ c) & mask, k)
    if return_carries:
        return z, BoolShares(c, k)
    return z


def a2b(x: ArithShares, rng: DeterministicRng) -> BoolShares:
    """Arithmetic (mod 2^w) to Boolean conversion at any order.

    Two shares: fresh Boolean masks for each arithmetic share, then one
    SecAdd. More shares: convert each half recursively, expand both with
    RefreshXOR, and SecAdd them.
    """
    w = x.width
    if w is None:
        raise StructuralError(f"a2b needs a power-of-two modulus, got {x.modulus}")
    a = x.shares
    n = a.shape[0]
    if n == 1:
        return BoolShares(a.copy(), w)
    if n == 2:
        u1 = rng.words(w, a.shape[1:])
        v1 = rng.words(w, a.shape[1:])
        u = BoolShares(np.stack([u1, u1 ^ a[0]]), w)
        v = BoolShares(np.stack([v1, v1 ^ a[1]]), w)
        return sec_add(u, v, w, rng)
    half = n // 2
    u = refresh_xor(a2b(ArithShares(a[:half], x.modulus), rng), n - 1, rng)
    v = refresh_xor(a2b(ArithShares(a[half:], x.modulus), rng), n - 1, rng)
    return sec_add(u, v, w, rng)


def transform_power_of_2(x: ArithShares, target_width: int, rng: DeterministicRng) -> ArithShares:
    """Move shares mod q to shares mod 2^w of the canonical value in [0, q).

    Implemented by resharing: only the unmasked sum and the uniformity of
    the output shares matter to the fault behaviour downstream.
    """
    if x.modulus >= 1 << target_width:
        raise StructuralError("target width too small for the source modulus")
    value = x.unmask()
    return arith_share(value, x.order, 1 << target_width, rng)


def msb_shares(d: BoolShares) -> BoolShares:
    return BoolShares((d.shares >> (d.width - 1)) & 1, 1)


def _run_hook(g: ArithShares, fault_hook: Optional[FaultHook]):
    before = g.shares.copy()
    if fault_hook is not None:
        g = ArithShares(np.asarray(fault_hook(g.shares.copy()), dtype=np.int64) % g.modulus, g.modulus)
    changed = g.shares != before
    share_idx = getattr(fault_hook, "share_index", 0)
    return g, before, changed.any(axis=0), share_idx


def masked_decode_kyber(m_prime: ArithShares, params: SchemeParams, rng: DeterministicRng,
                        fault_hook: Optional[FaultHook] = None,
                        register_width: Optional[int] = None):
    """Masked Kyber decode of arithmetic shares mod q.

    Returns the Boolean shares of the message bit(s) and a trace. The fault
    hook receives the A2B input share array and returns a modified copy.
    """
    if not params.is_kyber:
        raise StructuralError("masked_decode_kyber needs Kyber parameters")
    q = params.q
    w = register_width or params.a2b_width
    if m_prime.modulus != q:
        raise StructuralError("input shares must be mod q")
    sh = m_prime.shares.copy()
    sh[0] = (sh[0] - q // 4) % q
    g = transform_power_of_2(ArithShares(sh, q), w, rng)
    g.shares[0] = (g.shares[0] - q // 2) % (1 << w)
    unmasked_g = g.unmask()
    g, before, active, idx = _run_hook(g, fault_hook)
    bits = msb_shares(a2b(g, rng))
    trace = MaskedDecodeTrace(unmasked_g, before[idx], g.shares[idx], active, bits)
    return bits, trace


def masked_decode_saber(m_prime: ArithShares, params: SchemeParams, rng: DeterministicRng,
                        fault_hook: Optional[FaultHook] = None):
    if not params.is_saber:
        raise StructuralError("masked_decode_saber needs Saber parameters")
    if m_prime.modulus != params.p:
        raise StructuralError("input shares must be mod p")
    g, _, _, _ = _run_hook(m_prime, fault_hook)
    return msb_shares(a2b(g, rng))
