import numpy as np
import pytest

from carryfault import ConfigError, StructuralError, get_params
from carryfault.params import SCHEMES, KYBER512
from carryfault.ring import (cbd_from_words, cbd_pmf, cbd_sample, centered, compress, decode_bit,
                             decompress, encode_bit, negacyclic_matrix, poly_add, poly_mul_negacyclic,
                             poly_sub)
from carryfault.rng import DeterministicRng

from oracles import binomial_pmf, compress_ref, decompress_ref, negacyclic_ref

Q = 3329


def test_kyber512_parameters():
    p = get_params("Kyber512")
    assert (p.l, p.n, p.q, p.p, p.t, p.eta1, p.eta2, p.k) == (2, 256, 3329, 2**10, 2**4, 3, 2, 12)
    assert p.a2b_width == 13
    assert p.unknowns == 1024


@pytest.mark.parametrize("name", ["SaberLight", "Saber", "SaberFire"])
def test_saber_decode_moduli(name):
    p = SCHEMES[name]
    assert p.q == p.p == 2**p.k == 1024
    assert p.a2b_width == p.k


def test_power_of_two_compression_moduli():
    for p in SCHEMES.values():
        assert p.p & (p.p - 1) == 0 and p.t & (p.t - 1) == 0


def test_lookup_is_case_insensitive_and_rejects_unknown():
    assert get_params("lightsaber").name == "SaberLight"
    assert get_params("KYBER512") is KYBER512
    with pytest.raises(ConfigError):
        get_params("Kyber9000")


def test_poly_add_small():
    assert poly_add([3, 5], [6, 4], 7).tolist() == [2, 2]
    b = np.array([1, 2, 3])
    assert poly_add(np.zeros(3), b, 7).tolist() == [1, 2, 3]
    assert not poly_add(b, (7 - b) % 7, 7).any()
    assert poly_sub(b, b, 7).tolist() == [0, 0, 0]


def test_poly_add_length_mismatch():
    with pytest.raises(StructuralError):
        poly_add([1, 2], [1, 2, 3], 7)


def test_negacyclic_hand_example():
    assert poly_mul_negacyclic([1, 1], [1, 1], 17).tolist() == [0, 2]


def test_negacyclic_identity():
    b = np.arange(8) * 5 % 17
    one = np.zeros(8, dtype=np.int64)
    one[0] = 1
    assert poly_mul_negacyclic(one, b, 17).tolist() == b.tolist()


def test_negacyclic_against_brute_force():
    rng = np.random.default_rng(11)
    for n in (8, 256):
        for _ in range(20 if n == 8 else 5):
            a, b = rng.integers(0, Q, n), rng.integers(0, Q, n)
            assert poly_mul_negacyclic(a, b, Q).tolist() == negacyclic_ref(a, b, Q)


def test_negacyclic_many_pairs_n256():
    rng = np.random.default_rng(5)
    a = rng.integers(0, Q, (1000, 256))
    b = rng.integers(-3, 4, (1000, 256))
    T = negacyclic_matrix(b)
    for j in range(0, 1000, 97):
        assert poly_mul_negacyclic(a[j], b[j], Q).tolist() == negacyclic_ref(a[j], b[j], Q)
    # matrix form used by batch encryption agrees everywhere
    got = np.einsum("kij,kj->ki", T, a) % Q
    want = np.stack([poly_mul_negacyclic(a[j], b[j], Q) for j in range(1000)])
    assert np.array_equal(got, want)


def test_negacyclic_degree_mismatch():
    with pytest.raises(StructuralError):
        poly_mul_negacyclic([1, 2], [1, 2, 3], 7)


def test_cbd_forced_values():
    assert int(cbd_from_words(0b111, 0, 3)) == 3
    assert int(cbd_from_words(0b101, 0b101, 3)) == 0


def test_cbd_pmf_exact():
    assert cbd_pmf(2).tolist() == [float(x) for x in binomial_pmf(2)]
    assert np.allclose(cbd_pmf(3) * 64, [1, 6, 15, 20, 15, 6, 1])


def test_cbd_empirical_eta2():
    draws = cbd_sample(2, DeterministicRng(1), 10**6)
    assert draws.min() >= -2 and draws.max() <= 2
    counts = np.bincount(draws + 2, minlength=5)
    expect = 10**6 * cbd_pmf(2)
    sigma = np.sqrt(expect * (1 - cbd_pmf(2)))
    assert np.all(np.abs(counts - expect) < 3 * sigma)


def test_cbd_range_eta3():
    d = cbd_sample(3, DeterministicRng(2), 10**5)
    assert d.min() >= -3 and d.max() <= 3


def test_compress_examples():
    assert compress(0, 16, Q) == 0
    assert compress(1664, 16, Q) == 8
    assert compress(3328, 1024, Q) == 0


def test_decompress_examples():
    assert decompress(0, 16, Q) == 0
    assert decompress(8, 16, Q) == 1665


@pytest.mark.parametrize("d", [16, 1024])
def test_compress_decompress_match_rational_oracle(d):
    v = np.arange(Q)
    assert compress(v, d, Q).tolist() == [compress_ref(x, d, Q) for x in range(Q)]
    w = np.arange(d)
    assert decompress(w, d, Q).tolist() == [decompress_ref(x, d, Q) for x in range(d)]


@pytest.mark.parametrize("d", [16, 1024])
def test_roundtrip_error_bound(d):
    v = np.arange(Q)
    err = centered(decompress(compress(v, d, Q), d, Q) - v, Q)
    assert np.abs(err).max() <= -(-Q // (2 * d))


def test_encode_decode_examples():
    assert encode_bit(0, Q) == 0
    assert encode_bit(1, Q) == 1665
    assert decode_bit(0, Q) == 0
    assert decode_bit(1665, Q) == 1
    assert decode_bit(831, Q) == 0 and decode_bit(832, Q) == 1
    for m in (0, 1):
        assert decode_bit(encode_bit(m, Q), Q) == m


def test_decode_tolerates_noise_below_quarter():
    d = np.arange(-830, 831)
    for m in (0, 1):
        assert np.all(decode_bit((encode_bit(m, Q) + d) % Q, Q) == m)


def test_rng_reproducible_and_independent():
    a = DeterministicRng(9, (1, 2)).words(16, 100)
    b = DeterministicRng(9, (1, 2)).words(16, 100)
    c = DeterministicRng(9, (1, 3)).words(16, 100)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert DeterministicRng(4).child("x").bytes(8) == DeterministicRng(4).child("x").bytes(8)
