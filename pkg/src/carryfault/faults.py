"""Fault injection and closed-form propagation predicates.

Bit positions are 1-based: bit j has value 2^(j-1).
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from .errors import ConfigError, StructuralError
from .masking import ArithShares, a2b, sec_add, BoolShares
from .params import SchemeParams
from .rng import DeterministicRng


class FaultKind(enum.Enum):
    STUCK0 = "stuck0"
    STUCK1 = "stuck1"
    FLIP = "flip"

    @classmethod
    def parse(cls, s: Union[str, "FaultKind"]) -> "FaultKind":
        if isinstance(s, FaultKind):
            return s
        aliases = {"stuck0": cls.STUCK0, "stuckat0": cls.STUCK0, "stuck-at-0": cls.STUCK0,
                   "stuck1": cls.STUCK1, "stuckat1": cls.STUCK1, "stuck-at-1": cls.STUCK1,
                   "flip": cls.FLIP, "bitflip": cls.FLIP, "bit-flip": cls.FLIP}
        try:
            return aliases[s.lower()]
        except KeyError:
            raise ConfigError(f"unknown fault kind {s!r}") from None


def bits_to_mask(bits: Iterable[int], width: Optional[int] = None) -> int:
    mask = 0
    for b in bits:
        if b < 1 or (width is not None and b > width):
            raise StructuralError(f"bit position {b} outside [1, {width}]")
        mask |= 1 << (b - 1)
    return mask


def apply_mask(value, mask, kind: FaultKind):
    """Element-wise injection of a bit mask; returns (new_value, active)."""
    value = np.asarray(value, dtype=np.int64)
    mask = np.asarray(mask, dtype=np.int64)
    if kind is FaultKind.STUCK1:
        new = value | mask
    elif kind is FaultKind.STUCK0:
        new = value & ~mask
    else:
        new = value ^ mask
    return new, new != value


@dataclass(frozen=True)
class FaultSpec:
    kind: FaultKind
    bits: frozenset
    share_index: int = 0
    coeff_index: Optional[int] = None

    def __post_init__(self):
        if not self.bits:
            raise StructuralError("fault needs at least one bit position")
        if min(self.bits) < 1:
            raise StructuralError("bit positions are 1-based")
        if self.share_index < 0:
            raise StructuralError("share index must be non-negative")

    @classmethod
    def single(cls, kind, bit: int, share_index: int = 0, coeff_index=None) -> "FaultSpec":
        return cls(FaultKind.parse(kind), frozenset([bit]), share_index, coeff_index)

    @property
    def mask(self) -> int:
        return bits_to_mask(self.bits)

    def hook(self):
        return make_hook(self.kind, self.mask, self.share_index, self.coeff_index)


def inject(value, spec: FaultSpec, width: int):
    if max(spec.bits) > width:
        raise StructuralError(f"bit {max(spec.bits)} outside a {width}-bit register")
    value = np.asarray(value, dtype=np.int64)
    if np.any((value < 0) | (value >= 1 << width)):
        raise StructuralError(f"share value outside [0, 2^{width})")
    return apply_mask(value, spec.mask, spec.kind)


def make_hook(kind: FaultKind, mask, share_index: int = 0, coeff_index: Optional[int] = None):
    """Build a fault hook for the masked decoders.

    ``mask`` is an int or an array broadcastable to one share's batch
    shape, so a batch of decodes can carry per-row fault patterns.
    ``coeff_index`` restricts the fault to one position of the last axis.
    """
    def hook(shares: np.ndarray) -> np.ndarray:
        if share_index >= shares.shape[0]:
            raise StructuralError(f"share index {share_index} with only {shares.shape[0]} shares")
        out = shares.copy()
        if coeff_index is None:
            out[share_index], _ = apply_mask(out[share_index], mask, kind)
        else:
            target = out[share_index][..., coeff_index]
            out[share_index][..., coeff_index], _ = apply_mask(target, mask, kind)
        return out

    hook.share_index = share_index
    return hook


RANDOM_SUBSET = "random-subset-1-8"


@dataclass
class FaultProfile:
    """Mixture of fault templates; each draw picks one entry by weight."""
    mix: list = field(default_factory=list)
    kind: FaultKind = FaultKind.STUCK1
    share: int = 0
    coeff: int = 0

    def __post_init__(self):
        self.kind = FaultKind.parse(self.kind)
        if not self.mix:
            raise ConfigError("fault profile needs at least one mixture entry")
        total = sum(p for p, _ in self.mix)
        if abs(total - 1.0) > 1e-9:
            raise ConfigError(f"fault mixture probabilities sum to {total}, not 1")
        for p, bits in self.mix:
            if p < 0:
                raise ConfigError("negative mixture probability")
            if bits != RANDOM_SUBSET:
                bits_to_mask(bits)

    @classmethod
    def ideal(cls, bit: int = 11, kind="stuck1", share=0, coeff=0) -> "FaultProfile":
        return cls([(1.0, (bit,))], kind, share, coeff)

    @classmethod
    def practical(cls, bit: int = 11, p_target: float = 0.1, share=0, coeff=0) -> "FaultProfile":
        return cls([(p_target, (bit,)), (1.0 - p_target, RANDOM_SUBSET)], "stuck1", share, coeff)

    def max_bit(self) -> int:
        return max(8 if bits == RANDOM_SUBSET else max(bits) for _, bits in self.mix)

    def draw_masks(self, rng: DeterministicRng, size) -> np.ndarray:
        probs = np.array([p for p, _ in self.mix])
        choice = rng.gen.choice(len(self.mix), size=size, p=probs)
        subsets = rng.uniform(255, size) + 1
        out = np.zeros(size, dtype=np.int64)
        for idx, (_, bits) in enumerate(self.mix):
            sel = choice == idx
            out[sel] = subsets[sel] if bits == RANDOM_SUBSET else bits_to_mask(bits)
        return out

    def to_json(self) -> dict:
        return {
            "mix": [{"p": p, "bits": bits if bits == RANDOM_SUBSET else list(bits)} for p, bits in self.mix],
            "kind": self.kind.value,
            "share": self.share,
            "coeff": self.coeff,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "FaultProfile":
        extra = set(obj) - {"mix", "kind", "share", "coeff"}
        if extra:
            raise ConfigError(f"unknown fault profile keys: {sorted(extra)}")
        try:
            mix = []
            for entry in obj["mix"]:
                bad = set(entry) - {"p", "bits"}
                if bad:
                    raise ConfigError(f"unknown fault mixture keys: {sorted(bad)}")
                bits = entry["bits"]
                if isinstance(bits, str):
                    if bits != RANDOM_SUBSET:
                        raise ConfigError(f"unknown bit template {bits!r}")
                else:
                    bits = tuple(int(b) for b in bits)
                mix.append((float(entry["p"]), bits))
            return cls(mix, obj.get("kind", "stuck1"), int(obj.get("share", 0)), int(obj.get("coeff", 0)))
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"malformed fault profile: {exc}") from None


@dataclass
class PropagationVerdict:
    active: np.ndarray
    propagated_to_msb: np.ndarray
    z_before: np.ndarray
    z_after: np.ndarray


def _bit(x, j):
    return (np.asarray(x, dtype=np.int64) >> (j - 1)) & 1


def lemma_predicate(z, x_share, k: int, kind, target: Optional[int] = None) -> PropagationVerdict:
    """Closed-form verdict for a single-bit fault at bit k-1 of one share.

    The fault reaches bit ``target`` (default k+1) exactly when it is
    active and every bit of z from k-1 up to target-1 can pass the carry
    (all ones when adding, all zeros when subtracting).
    """
    kind = FaultKind.parse(kind)
    target = k + 1 if target is None else target
    z = np.asarray(z, dtype=np.int64)
    xb = _bit(x_share, k - 1)
    run = np.arange(k - 1, target)
    zbits = (z[..., None] >> (run - 1)) & 1
    ones = zbits.all(axis=-1)
    zeros = (~zbits.astype(bool)).all(axis=-1)
    adds = xb == 0
    if kind is FaultKind.STUCK1:
        active = adds
        prop = active & ones
        delta = np.where(active, 1, 0)
    elif kind is FaultKind.STUCK0:
        active = ~adds
        prop = active & zeros
        delta = np.where(active, -1, 0)
    else:
        active = np.ones_like(adds)
        prop = np.where(adds, ones, zeros)
        delta = np.where(adds, 1, -1)
    z_after = (z + delta * (1 << (k - 2))) % (1 << target)
    return PropagationVerdict(np.asarray(active), np.asarray(prop), z, z_after)


def simulate_faulted_addition(x, y, k: int, kind, rng: DeterministicRng,
                              target: Optional[int] = None):
    """Fault share x at bit k-1, then add through a masked A2B.

    Returns (active, msb_flipped, z_after) from the real gadget output.
    """
    kind = FaultKind.parse(kind)
    w = k + 1 if target is None else target
    x = np.asarray(x, dtype=np.int64)
    y = np.asarray(y, dtype=np.int64)
    M = 1 << w
    clean = ArithShares(np.stack([x, y]) % M, M)
    x_star, active = apply_mask(x % M, 1 << (k - 2), kind)
    faulted = ArithShares(np.stack([x_star, y % M]), M)
    z0 = a2b(clean, rng).unmask()
    z1 = a2b(faulted, rng).unmask()
    flipped = ((z0 ^ z1) >> (w - 1)) & 1
    return active, flipped.astype(bool), z1


CARRY_TABLE_K2 = [(z, (z + 1) % 8, ((z ^ ((z + 1) % 8)) >> 2) & 1 == 1) for z in range(8)]


def lemma_check(ks: Sequence[int] = (2, 3, 4), seed: int = 0) -> dict:
    """Exhaustive agreement of lemma_predicate with simulated faulted A2B."""
    rng = DeterministicRng(seed, ("lemma",))
    report = {"cases": 0, "mismatches": 0, "per_k": {}}
    for k in ks:
        M = 1 << (k + 1)
        x, y = np.meshgrid(np.arange(M), np.arange(M), indexing="ij")
        x, y = x.ravel(), y.ravel()
        bad = 0
        for kind in (FaultKind.STUCK0, FaultKind.STUCK1, FaultKind.FLIP):
            active, flipped, z_sim = simulate_faulted_addition(x, y, k, kind, rng)
            v = lemma_predicate((x + y) % M, x, k, kind)
            bad += int(np.count_nonzero(v.active != active))
            bad += int(np.count_nonzero(v.propagated_to_msb != flipped))
            bad += int(np.count_nonzero(v.z_after != z_sim))
        report["per_k"][k] = {"cases": 3 * x.size, "mismatches": bad}
        report["cases"] += 3 * x.size
        report["mismatches"] += bad
    # k=2 carry table, active stuck-at-1
    z = np.arange(8)
    v = lemma_predicate(z, np.zeros(8, dtype=np.int64), 2, FaultKind.STUCK1)
    report["carry_table"] = [(int(a), int(b), bool(c)) for a, b, c in zip(z, v.z_after, v.propagated_to_msb)]
    report["carry_table_ok"] = report["carry_table"] == CARRY_TABLE_K2
    return report


def _intervals(mask: np.ndarray):
    out, start = [], None
    for v, hit in enumerate(mask):
        if hit and start is None:
            start = v
        if not hit and start is not None:
            out.append((start, v - 1))
            start = None
    if start is not None:
        out.append((start, len(mask) - 1))
    return out


def failure_ranges_closed_form(width: int, fault_bit: int, kind) -> list:
    """Values z in [0, 2^width) whose MSB flips under an active fault."""
    kind = FaultKind.parse(kind)
    if kind is FaultKind.FLIP:
        raise StructuralError("bit-flip ranges depend on the share value; use stuck-at kinds")
    z = np.arange(1 << width)
    x = np.full_like(z, 0 if kind is FaultKind.STUCK1 else 1 << (fault_bit - 1))
    v = lemma_predicate(z, x, fault_bit + 1, kind, target=width)
    return _intervals(v.propagated_to_msb)


def kyber_failure_ranges(params: SchemeParams, kind, width: Optional[int] = None) -> list:
    """Failing g-values for a fault at bit k-1 among reachable decode inputs."""
    if not params.is_kyber:
        raise StructuralError("kyber_failure_ranges needs Kyber parameters")
    from .kem import g_value  # local import keeps the module graph acyclic

    w = width or params.a2b_width
    reachable = np.zeros(1 << w, dtype=bool)
    reachable[g_value(np.arange(params.q), params, w)] = True
    hits = np.zeros(1 << w, dtype=bool)
    for lo, hi in failure_ranges_closed_form(w, params.k - 1, kind):
        hits[lo:hi + 1] = True
    return _intervals(hits & reachable)


def saber_failure_ranges(params: SchemeParams, kind) -> list:
    if not params.is_saber:
        raise StructuralError("saber_failure_ranges needs Saber parameters")
    return failure_ranges_closed_form(params.k, params.k - 1, kind)


def in_ranges(values, ranges) -> np.ndarray:
    values = np.asarray(values)
    hit = np.zeros(values.shape, dtype=bool)
    for lo, hi in ranges:
        hit |= (values >= lo) & (values <= hi)
    return hit
