"""LPR/Kyber key generation, encapsulation records and the faulty decryptor.

All encapsulation randomness is kept in the record: the attacker plays the
encapsulator and knows everything except the long-term secret. Secrets
live in :class:`KeyPair`; attack code only ever sees :class:`PublicKey`
and talks to the secret holder through :class:`DecryptionDevice`.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import StructuralError
from .masking import ArithShares, arith_share, masked_decode_kyber
from .params import SchemeParams
from .ring import (centered, cbd_sample, compress, decode_bit, decompress,
                   encode_bit, negacyclic_matrix, poly_mul_negacyclic)
from .rng import DeterministicRng


def expand_matrix(A_seed: int, params: SchemeParams) -> np.ndarray:
    """Uniform (l, l, n) matrix derived from a seed."""
    return DeterministicRng(A_seed, ("A",)).uniform(params.q, (params.l, params.l, params.n))


def polyvec_dot(a: np.ndarray, b: np.ndarray, M: Optional[int]) -> np.ndarray:
    """Sum of negacyclic products a[k]*b[k] for (l, n) vectors."""
    out = sum(poly_mul_negacyclic(x, y, None) for x, y in zip(a, b))
    return out if M is None else out % M


@dataclass
class PublicKey:
    A_seed: int
    A: np.ndarray
    b: np.ndarray


@dataclass
class KeyPair:
    seed: int
    A_seed: int
    A: np.ndarray
    b: np.ndarray
    s: np.ndarray
    e: np.ndarray

    @property
    def public(self) -> PublicKey:
        return PublicKey(self.A_seed, self.A, self.b)

    def secret_vector(self) -> np.ndarray:
        """Unknowns in solver order: e followed by s, flattened."""
        return np.concatenate([self.e.ravel(), self.s.ravel()])


def keygen(params: SchemeParams, rng: DeterministicRng) -> KeyPair:
    if not params.is_kyber:
        raise StructuralError("keygen supports Kyber parameters only")
    A_seed = int(rng.uniform(1 << 62))
    A = expand_matrix(A_seed, params)
    s = cbd_sample(params.eta1, rng, (params.l, params.n))
    e = cbd_sample(params.eta1, rng, (params.l, params.n))
    b = np.stack([(polyvec_dot(A[i], s, None) + e[i]) % params.q for i in range(params.l)])
    return KeyPair(rng.seed, A_seed, A, b, s, e)


@dataclass
class EncapsulationRecord:
    m: np.ndarray
    s_prime: np.ndarray
    e1: np.ndarray
    e2: np.ndarray
    u: np.ndarray
    v: np.ndarray
    delta_u: np.ndarray
    delta_v: np.ndarray

    def to_json(self) -> dict:
        return {k: getattr(self, k).tolist() for k in
                ("m", "s_prime", "e1", "e2", "u", "v", "delta_u", "delta_v")}

    @classmethod
    def from_json(cls, obj: dict) -> "EncapsulationRecord":
        return cls(**{k: np.asarray(obj[k], dtype=np.int64) for k in
                      ("m", "s_prime", "e1", "e2", "u", "v", "delta_u", "delta_v")})


@dataclass
class EncapsulationBatch:
    """Leading axis indexes ciphertexts; fields mirror EncapsulationRecord."""
    m: np.ndarray
    s_prime: np.ndarray
    e1: np.ndarray
    e2: np.ndarray
    u: np.ndarray
    v: np.ndarray
    delta_u: np.ndarray
    delta_v: np.ndarray

    def __len__(self):
        return self.m.shape[0]

    def record(self, j: int) -> EncapsulationRecord:
        return EncapsulationRecord(*(getattr(self, f)[j] for f in
                                     ("m", "s_prime", "e1", "e2", "u", "v", "delta_u", "delta_v")))

    def take(self, idx) -> "EncapsulationBatch":
        return EncapsulationBatch(*(getattr(self, f)[idx] for f in
                                    ("m", "s_prime", "e1", "e2", "u", "v", "delta_u", "delta_v")))


def _compress_roundtrip(x: np.ndarray, d: int, q: int):
    y = decompress(compress(x, d, q), d, q)
    return y, centered(y - x, q)


def encrypt(pk: PublicKey, params: SchemeParams, m, s_prime, e1, e2,
            compress_ct: bool = True) -> EncapsulationRecord:
    q = params.q
    u_raw = np.stack([(polyvec_dot(pk.A[:, i], s_prime, None) + e1[i]) % q for i in range(params.l)])
    v_raw = (polyvec_dot(pk.b, s_prime, None) + e2 + encode_bit(m, q)) % q
    if compress_ct:
        u, du = _compress_roundtrip(u_raw, params.p, q)
        v, dv = _compress_roundtrip(v_raw, params.t, q)
    else:
        u, du = u_raw, np.zeros_like(u_raw)
        v, dv = v_raw, np.zeros_like(v_raw)
    return EncapsulationRecord(np.asarray(m, dtype=np.int64), s_prime, e1, e2, u, v, du, dv)


def _sample_randomness(params: SchemeParams, rng: DeterministicRng, lead=()):
    l, n = params.l, params.n
    m = rng.words(1, lead + (n,))
    s_prime = cbd_sample(params.eta1, rng, lead + (l, n))
    e1 = cbd_sample(params.eta1, rng, lead + (l, n))
    e2 = cbd_sample(params.eta2, rng, lead + (n,))
    return m, s_prime, e1, e2


def encapsulate(pk: PublicKey, params: SchemeParams, rng: DeterministicRng) -> EncapsulationRecord:
    return encrypt(pk, params, *_sample_randomness(params, rng))


class BatchEncryptor:
    """Encrypt many messages at once with dense negacyclic matrices.

    Products stay far below 2^53, so float64 matmul is exact.
    """

    def __init__(self, pk: PublicKey, params: SchemeParams):
        self.params = params
        l, n = params.l, params.n
        self.Mu = np.zeros((l * n, l * n))
        for i in range(l):
            for j in range(l):
                self.Mu[i * n:(i + 1) * n, j * n:(j + 1) * n] = negacyclic_matrix(pk.A[j, i])
        self.Mv = np.concatenate([negacyclic_matrix(pk.b[j]) for j in range(l)], axis=1).astype(float)

    def encapsulate(self, count: int, rng: DeterministicRng) -> EncapsulationBatch:
        p = self.params
        q, l, n = p.q, p.l, p.n
        m, s_prime, e1, e2 = _sample_randomness(p, rng, (count,))
        sp = s_prime.reshape(count, l * n).astype(float)
        u_raw = (np.rint(sp @ self.Mu.T).astype(np.int64).reshape(count, l, n) + e1) % q
        v_raw = (np.rint(sp @ self.Mv.T).astype(np.int64) + e2 + encode_bit(m, q)) % q
        u, du = _compress_roundtrip(u_raw, p.p, q)
        v, dv = _compress_roundtrip(v_raw, p.t, q)
        return EncapsulationBatch(m, s_prime, e1, e2, u, v, du, dv)


def encapsulate_batch(pk: PublicKey, params: SchemeParams, count: int,
                      rng: DeterministicRng) -> EncapsulationBatch:
    return BatchEncryptor(pk, params).encapsulate(count, rng)


def decrypt_plain(kp: KeyPair, record: EncapsulationRecord, params: SchemeParams) -> np.ndarray:
    """m' = v - u.s mod q, without masking."""
    return (record.v - polyvec_dot(record.u, kp.s, None)) % params.q


def m_prime_coeff(s: np.ndarray, batch: EncapsulationBatch, i: int, q: int) -> np.ndarray:
    """Coefficient i of v - u.s for every ciphertext in a batch."""
    l, n = s.shape
    rows = np.concatenate([negacyclic_matrix(s[k])[i] for k in range(l)])
    us = batch.u.reshape(len(batch), l * n) @ rows
    return (batch.v[:, i] - us) % q


def decrypt_masked(kp: KeyPair, record: EncapsulationRecord, params: SchemeParams, order: int,
                   rng: DeterministicRng, fault_hook=None, register_width: Optional[int] = None):
    """Masked decryption of a full message; returns (m_star, failure, trace).

    The secret is split into order+1 arithmetic shares and v - u.s is
    computed share-wise before decoding.
    """
    q = params.q
    s_sh = arith_share(kp.s, order, q, rng).shares
    parts = np.stack([(-polyvec_dot(record.u, s_sh[j], None)) % q for j in range(order + 1)])
    parts[0] = (parts[0] + record.v) % q
    bits, trace = masked_decode_kyber(ArithShares(parts, q), params, rng, fault_hook, register_width)
    m_star = bits.unmask()
    return m_star, bool(np.any(m_star != record.m)), trace


def decryption_noise(kp: KeyPair, record: EncapsulationRecord, params: SchemeParams) -> np.ndarray:
    """Signed noise e.s' - s.(e1 + du) + e2 + dv, from the closed form."""
    d = (polyvec_dot(kp.e, record.s_prime, None)
         - polyvec_dot(kp.s, record.e1 + record.delta_u, None)
         + record.e2 + record.delta_v)
    return centered(d, params.q)


def g_value(m_prime, params: SchemeParams, width: Optional[int] = None) -> np.ndarray:
    """Unmasked value entering the decode A2B."""
    q = params.q
    w = width or params.a2b_width
    c = (np.asarray(m_prime, dtype=np.int64) - q // 4) % q
    return (c - q // 2) % (1 << w)


class DecryptionDevice:
    """The secret holder: answers faulted decapsulation queries.

    ``query`` runs the real masked decode of one coefficient for a batch of
    ciphertexts (each row with its own fault mask and fresh shares) and
    reports which rows decrypted incorrectly.
    """

    def __init__(self, kp: KeyPair, params: SchemeParams, order: int = 1,
                 register_width: Optional[int] = None):
        self._kp = kp
        self.params = params
        self.order = order
        self.register_width = register_width

    def m_prime(self, batch: EncapsulationBatch, i: int) -> np.ndarray:
        return m_prime_coeff(self._kp.s, batch, i, self.params.q)

    def g(self, batch: EncapsulationBatch, i: int) -> np.ndarray:
        return g_value(self.m_prime(batch, i), self.params, self.register_width)

    def query_coeff(self, m_prime: np.ndarray, m_bits: np.ndarray, hook, rng: DeterministicRng) -> np.ndarray:
        sh = arith_share(m_prime, self.order, self.params.q, rng)
        bits, _ = masked_decode_kyber(sh, self.params, rng, hook, self.register_width)
        return bits.unmask() != m_bits


def save_bundle(path, kp: KeyPair, records=()) -> None:
    obj = {
        "seed": kp.seed,
        "A_seed": kp.A_seed,
        "s": kp.s.tolist(),
        "e": kp.e.tolist(),
        "b": kp.b.tolist(),
        "records": [r.to_json() for r in records],
    }
    with open(path, "w") as fh:
        json.dump(obj, fh)


def load_bundle(path, params: SchemeParams):
    with open(path) as fh:
        obj = json.load(fh)
    A = expand_matrix(obj["A_seed"], params)
    kp = KeyPair(obj["seed"], obj["A_seed"], A, np.asarray(obj["b"], dtype=np.int64),
                 np.asarray(obj["s"], dtype=np.int64), np.asarray(obj["e"], dtype=np.int64))
    if kp.s.shape != (params.l, params.n):
        raise StructuralError(f"secret shape {kp.s.shape} does not match {params.name}")
    return kp, [EncapsulationRecord.from_json(r) for r in obj.get("records", [])]
