"""Fault campaign: ciphertext filtering, repeated injection, inequalities.

Ciphertexts are processed in fixed-size blocks. Block ``b`` draws all its
randomness from the stream ``(seed, "block", b)``, so results do not
depend on thread count and a longer campaign extends a shorter one with
the same seed instead of reshuffling it.
"""
from __future__ import annotations

import enum
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict
from typing import Optional

import numpy as np

from .errors import ConfigError, StructuralError
from .faults import FaultKind, FaultProfile, kyber_failure_ranges, make_hook
from .kem import (BatchEncryptor, DecryptionDevice, EncapsulationBatch, EncapsulationRecord,
                  PublicKey, g_value)
from .params import SchemeParams
from .ring import encode_bit
from .rng import DeterministicRng


class Relation(enum.Enum):
    GE = "GE"
    LT = "LT"


class Verdict(enum.Enum):
    FAILURE = "Failure"
    NO_FAILURE = "NoFailureAfterBeta"


@dataclass
class CampaignConfig:
    params: SchemeParams
    profile: FaultProfile
    order: int = 1
    beta: int = 20
    filter_pool: int = 13
    rejection_rate: float = 0.5
    ciphertexts: Optional[int] = 60_000
    target_inequalities: int = 30_000
    block_size: int = 250
    register_width: Optional[int] = None
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        if not self.params.is_kyber:
            raise ConfigError("campaigns run against Kyber parameter sets")
        if self.beta < 1:
            raise ConfigError("beta must be >= 1")
        if self.filter_pool < 1:
            raise ConfigError("filter_pool must be >= 1")
        if not 0.0 <= self.rejection_rate < 1.0:
            raise ConfigError("rejection_rate must lie in [0, 1)")
        if self.target_inequalities <= 0:
            raise ConfigError("target_inequalities must be positive")
        if self.ciphertexts is not None and self.ciphertexts <= 0:
            raise ConfigError("ciphertexts must be positive")
        if self.order < 1:
            raise ConfigError("masking order must be >= 1")
        if self.block_size < 1 or self.threads < 1:
            raise ConfigError("block_size and threads must be >= 1")
        if not 0 <= self.coeff_index < self.params.n:
            raise ConfigError(f"coefficient index {self.coeff_index} outside [0, {self.params.n})")
        w = self.register_width or self.params.a2b_width
        if w < self.params.a2b_width:
            raise ConfigError(f"register width {w} below {self.params.a2b_width}")
        if not 0 <= self.profile.share <= self.order:
            raise ConfigError(f"fault share {self.profile.share} outside [0, {self.order}]")
        if self.profile.max_bit() > w:
            raise ConfigError("fault bit outside the A2B register")

    @property
    def coeff_index(self) -> int:
        return self.profile.coeff

    def echo(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if k not in ("params", "profile")}
        d["scheme"] = self.params.name
        d["profile"] = self.profile.to_json()
        return d


@dataclass
class Observation:
    record: int
    coeff_index: int
    verdict: Verdict
    repetitions_used: int


@dataclass
class Inequality:
    coeffs: np.ndarray
    constant: int
    tau: int
    relation: Relation

    def holds(self, x: np.ndarray) -> bool:
        lhs = int(self.coeffs.astype(np.int64) @ x) + self.constant
        return lhs >= self.tau if self.relation is Relation.GE else lhs < self.tau


@dataclass
class InequalitySystem:
    """Rows ``coeffs . x + constant (>= or <) tau``; x = (e || s) flattened.

    Coefficients are stored as int8 (bounded by eta1 and the
    compression error). ``ge`` marks failure-derived rows.
    """
    coeffs: np.ndarray
    constant: np.ndarray
    ge: np.ndarray
    tau: np.ndarray

    def __len__(self):
        return self.coeffs.shape[0]

    @property
    def unknowns(self) -> int:
        return self.coeffs.shape[1]

    def row(self, t: int) -> Inequality:
        return Inequality(self.coeffs[t], int(self.constant[t]), int(self.tau[t]),
                          Relation.GE if self.ge[t] else Relation.LT)

    def head(self, count: int) -> "InequalitySystem":
        return InequalitySystem(self.coeffs[:count], self.constant[:count], self.ge[:count], self.tau[:count])

    def take(self, idx) -> "InequalitySystem":
        return InequalitySystem(self.coeffs[idx], self.constant[idx], self.ge[idx], self.tau[idx])

    @classmethod
    def concat(cls, parts, unknowns: int) -> "InequalitySystem":
        if not parts:
            return cls.empty(unknowns)
        return cls(np.concatenate([p.coeffs for p in parts]), np.concatenate([p.constant for p in parts]),
                   np.concatenate([p.ge for p in parts]), np.concatenate([p.tau for p in parts]))

    @classmethod
    def empty(cls, unknowns: int) -> "InequalitySystem":
        return cls(np.zeros((0, unknowns), np.int8), np.zeros(0, np.int64), np.zeros(0, bool), np.zeros(0, np.int64))

    def satisfied(self, x: np.ndarray) -> np.ndarray:
        lhs = self.coeffs.astype(np.int64) @ np.asarray(x, dtype=np.int64) + self.constant
        return np.where(self.ge, lhs >= self.tau, lhs < self.tau)

    def to_csv(self, path) -> None:
        header = "relation,tau,constant," + ",".join(f"c_{j}" for j in range(self.unknowns))
        rel = np.where(self.ge, "GE", "LT")
        with open(path, "w", newline="\n") as fh:
            fh.write(header + "\n")
            for t in range(len(self)):
                fh.write(f"{rel[t]},{self.tau[t]},{self.constant[t]},")
                fh.write(",".join(map(str, self.coeffs[t].tolist())))
                fh.write("\n")

    @classmethod
    def from_csv(cls, path) -> "InequalitySystem":
        with open(path) as fh:
            header = fh.readline().strip().split(",")
            if header[:3] != ["relation", "tau", "constant"] or len(header) < 4:
                raise StructuralError(f"{path}: line 1: unexpected header")
            psi = len(header) - 3
            coeffs, const, ge, tau = [], [], [], []
            for lineno, line in enumerate(fh, start=2):
                line = line.strip()
                if not line:
                    continue
                parts = line.split(",", 3)
                if len(parts) != 4 or parts[0] not in ("GE", "LT"):
                    raise StructuralError(f"{path}: line {lineno}: malformed row")
                try:
                    row = np.array(parts[3].split(","), dtype=np.int64)
                    t, c = int(parts[1]), int(parts[2])
                except ValueError:
                    raise StructuralError(f"{path}: line {lineno}: non-integer field") from None
                if row.size != psi:
                    raise StructuralError(f"{path}: line {lineno}: expected {psi} coefficients, got {row.size}")
                if np.any(np.abs(row) > 127):
                    raise StructuralError(f"{path}: line {lineno}: coefficient out of int8 range")
                coeffs.append(row.astype(np.int8))
                const.append(c)
                tau.append(t)
                ge.append(parts[0] == "GE")
        if not coeffs:
            return cls.empty(psi)
        return cls(np.stack(coeffs), np.array(const, np.int64), np.array(ge, bool), np.array(tau, np.int64))


def failure_threshold(params: SchemeParams, kind, width: Optional[int] = None):
    """(sign, tau): a failure means sign*d >= tau for the targeted message bit.

    Stuck-at-1 (and bit-flip) attacks use m[i]=1 coefficients, where a
    failure means g >= lower edge of the failing range. Stuck-at-0 uses
    m[i]=0 coefficients and the upper edge; the inequality is negated so
    that failures are always ``>=`` rows.
    """
    kind = FaultKind.parse(kind)
    w = width or params.a2b_width
    if kind is FaultKind.STUCK0:
        (lo, hi), = kyber_failure_ranges(params, kind, w)
        g0 = int(g_value(encode_bit(0, params.q), params, w))
        return -1, -(hi - g0)
    probe = FaultKind.STUCK1
    (lo, hi), = kyber_failure_ranges(params, probe, w)
    g1 = int(g_value(encode_bit(1, params.q), params, w))
    return 1, lo - g1


def naive_threshold_rhs(params: SchemeParams) -> int:
    """floor(q/4) - (2^10 - floor(q/4)); reported for comparison only."""
    return params.q // 4 - (2**10 - params.q // 4)


def target_bit(kind) -> int:
    return 0 if FaultKind.parse(kind) is FaultKind.STUCK0 else 1


def select_batch(encryptor: BatchEncryptor, device: DecryptionDevice, count: int,
                 config: CampaignConfig, rng: DeterministicRng) -> EncapsulationBatch:
    """Pick ``count`` ciphertexts, each the extremal-g qualifying member of a pool."""
    i = config.coeff_index
    want = target_bit(config.profile.kind)
    pool = config.filter_pool
    chosen = []
    missing = count
    while missing:
        cand = encryptor.encapsulate(missing * pool, rng)
        g = device.g(cand, i).reshape(missing, pool)
        ok = cand.m[:, i].reshape(missing, pool) == want
        # stuck-at-0 targets the top of the m=0 range instead of the bottom
        key = np.where(ok, g if want else -g, np.iinfo(np.int64).max)
        best = key.argmin(axis=1)
        has = ok.any(axis=1)
        rows = np.nonzero(has)[0]
        chosen.append(cand.take(rows * pool + best[rows]))
        missing -= rows.size
    if len(chosen) == 1:
        return chosen[0]
    return EncapsulationBatch(*(np.concatenate([getattr(c, f) for c in chosen]) for f in
                                ("m", "s_prime", "e1", "e2", "u", "v", "delta_u", "delta_v")))


def select_ciphertext(pk: PublicKey, device: DecryptionDevice, config: CampaignConfig,
                      rng: DeterministicRng) -> EncapsulationRecord:
    return select_batch(BatchEncryptor(pk, config.params), device, 1, config, rng).record(0)


def observe_batch(device: DecryptionDevice, m_prime: np.ndarray, m_bits: np.ndarray,
                  config: CampaignConfig, rng: DeterministicRng):
    """Inject up to beta times per row; returns (failed, repetitions)."""
    size = m_prime.shape[0]
    failed = np.zeros(size, dtype=bool)
    reps = np.zeros(size, dtype=np.int64)
    live = np.arange(size)
    prof = config.profile
    for _ in range(config.beta):
        if live.size == 0:
            break
        masks = prof.draw_masks(rng, live.size)
        hook = make_hook(prof.kind, masks, prof.share)
        hit = device.query_coeff(m_prime[live], m_bits[live], hook, rng)
        reps[live] += 1
        failed[live[hit]] = True
        live = live[~hit]
    return failed, reps


def observe(device: DecryptionDevice, record: EncapsulationRecord, config: CampaignConfig,
            rng: DeterministicRng, record_id: int = 0) -> Observation:
    i = config.coeff_index
    batch = EncapsulationBatch(*(np.asarray(getattr(record, f))[None] for f in
                                 ("m", "s_prime", "e1", "e2", "u", "v", "delta_u", "delta_v")))
    failed, reps = observe_batch(device, device.m_prime(batch, i), batch.m[:, i], config, rng)
    verdict = Verdict.FAILURE if failed[0] else Verdict.NO_FAILURE
    return Observation(record_id, i, verdict, int(reps[0]))


def inequality_rows(batch: EncapsulationBatch, i: int, sign: int = 1):
    """Coefficient rows and constants of sign * d[i] over (e || s).

    Row i of the negacyclic matrix of a is a[(i - j) mod n] with a minus
    sign when j > i.
    """
    n = batch.m.shape[1]
    j = np.arange(n)
    idx = (i - j) % n
    rot = np.where(j <= i, 1, -1)
    e_part = batch.s_prime[..., idx] * rot
    s_part = -(batch.e1 + batch.delta_u)[..., idx] * rot
    rows = np.concatenate([e_part.reshape(len(batch), -1), s_part.reshape(len(batch), -1)], axis=1)
    const = batch.e2[:, i] + batch.delta_v[:, i]
    return (sign * rows).astype(np.int8), sign * const


def build_inequality(record: EncapsulationRecord, observation: Observation, params: SchemeParams,
                     kind="stuck1", width: Optional[int] = None) -> Inequality:
    sign, tau = failure_threshold(params, kind, width)
    batch = EncapsulationBatch(*(np.asarray(getattr(record, f))[None] for f in
                                 ("m", "s_prime", "e1", "e2", "u", "v", "delta_u", "delta_v")))
    rows, const = inequality_rows(batch, observation.coeff_index, sign)
    rel = Relation.GE if observation.verdict is Verdict.FAILURE else Relation.LT
    return Inequality(rows[0], int(const[0]), tau, rel)


def balance(system: InequalitySystem, rejection_rate: float, rng: DeterministicRng) -> InequalitySystem:
    """Drop each failure-derived row independently with probability rejection_rate."""
    if rejection_rate == 0:
        return system
    drop = system.ge & (rng.random(len(system)) < rejection_rate)
    return system.take(~drop)


@dataclass
class BlockResult:
    system: InequalitySystem
    ciphertexts: int
    candidates: int
    injections: int
    failures: int
    rep_hist: np.ndarray


@dataclass
class CampaignResult:
    system: InequalitySystem
    counters: dict
    config: CampaignConfig
    metadata: dict = field(default_factory=dict)

    def write(self, csv_path, meta_path) -> None:
        self.system.to_csv(csv_path)
        with open(meta_path, "w") as fh:
            json.dump(self.metadata, fh, indent=2, sort_keys=True)


class Campaign:
    def __init__(self, pk: PublicKey, device: DecryptionDevice, config: CampaignConfig):
        if device.order != config.order:
            raise ConfigError("device masking order differs from the campaign order")
        self.pk = pk
        self.device = device
        self.config = config
        self.encryptor = BatchEncryptor(pk, config.params)
        self.sign, self.tau = failure_threshold(config.params, config.profile.kind, config.register_width)

    def run_block(self, b: int, count: int) -> BlockResult:
        cfg = self.config
        i = cfg.coeff_index
        rng = DeterministicRng(cfg.seed, ("block", b))
        batch = select_batch(self.encryptor, self.device, count, cfg, rng.child("select"))
        mp = self.device.m_prime(batch, i)
        failed, reps = observe_batch(self.device, mp, batch.m[:, i], cfg, rng.child("observe"))
        rows, const = inequality_rows(batch, i, self.sign)
        system = InequalitySystem(rows, const.astype(np.int64), failed, np.full(count, self.tau, np.int64))
        system = balance(system, cfg.rejection_rate, rng.child("balance"))
        return BlockResult(system, count, count * cfg.filter_pool, int(reps.sum()), int(failed.sum()),
                           np.bincount(reps, minlength=cfg.beta + 1))

    def _run_blocks(self, jobs):
        if self.config.threads == 1:
            return [self.run_block(b, c) for b, c in jobs]
        with ThreadPoolExecutor(self.config.threads) as pool:
            return list(pool.map(lambda bc: self.run_block(*bc), jobs))

    def run(self, progress=None) -> CampaignResult:
        cfg = self.config
        B = cfg.block_size
        results = []
        if cfg.ciphertexts is not None:
            full, rest = divmod(cfg.ciphertexts, B)
            jobs = [(b, B) for b in range(full)] + ([(full, rest)] if rest else [])
            results = self._run_blocks(jobs)
        else:
            kept, b = 0, 0
            while kept < cfg.target_inequalities:
                jobs = [(b + t, B) for t in range(cfg.threads)]
                for r in self._run_blocks(jobs):
                    results.append(r)
                    kept += len(r.system)
                b += cfg.threads
                if progress:
                    progress(kept)
        system = InequalitySystem.concat([r.system for r in results], cfg.params.unknowns)
        if cfg.ciphertexts is None:
            system = system.head(cfg.target_inequalities)
        counters = self._counters(results, system)
        meta = {
            "config": cfg.echo(),
            "counters": counters,
            "tau": self.tau,
            "sign": self.sign,
            "naive_threshold_rhs": naive_threshold_rhs(cfg.params),
            "injection_counting": "every injection on every selected ciphertext, including rows later rejected",
            "unknown_order": "e[0..l) then s[0..l), each n coefficients",
        }
        return CampaignResult(system, counters, cfg, meta)

    @staticmethod
    def _counters(results, system) -> dict:
        cts = sum(r.ciphertexts for r in results)
        inj = sum(r.injections for r in results)
        fails = sum(r.failures for r in results)
        hist = np.sum([r.rep_hist for r in results], axis=0) if results else np.zeros(1, np.int64)
        ge = int(system.ge.sum())
        return {
            "ciphertexts": cts,
            "candidates": sum(r.candidates for r in results),
            "injections": inj,
            "failures": fails,
            "failure_fraction": fails / cts if cts else 0.0,
            "mean_repetitions": inj / cts if cts else 0.0,
            "inequalities": len(system),
            "ge": ge,
            "lt": len(system) - ge,
            "repetition_histogram": hist.tolist(),
        }


def run_campaign(pk: PublicKey, device: DecryptionDevice, config: CampaignConfig, progress=None) -> CampaignResult:
    return Campaign(pk, device, config).run(progress)
