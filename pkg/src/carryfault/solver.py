"""Iterative PMF solver for systems of noisy linear inequalities.

Each unknown carries a PMF over [-eta, eta]. One iteration computes, for
every unknown and value, the product of per-inequality likelihoods, with
the contribution of all other unknowns approximated by a Gaussian using
the row's leave-one-out mean and variance. All unknowns are updated from
the same frozen state.

Two update rules are available. ``replace`` sets the PMF to prior x
likelihoods. ``accumulate`` multiplies the (scaled) likelihoods into the
current PMF, so evidence builds up over iterations; with thousands of
correlated rows per unknown this is the rule that actually converges.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import log_ndtr

from . import _kernels
from .campaign import Inequality, InequalitySystem, Relation
from .errors import ConfigError, StructuralError
from .params import SchemeParams
from .ring import cbd_pmf


@dataclass
class Pmf:
    support: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        if self.support.shape != self.probs.shape:
            raise StructuralError("support and probabilities differ in length")
        if np.any(self.probs < 0) or abs(self.probs.sum() - 1.0) > 1e-12:
            raise StructuralError("PMF must be nonnegative and sum to 1")

    @property
    def mean(self) -> float:
        return float(self.support @ self.probs)

    @property
    def var(self) -> float:
        return float((self.support**2) @ self.probs - self.mean**2)


@dataclass
class SolverConfig:
    max_iterations: int = 100
    threshold: float = 0.999
    damping: float = 0.0
    var_floor: float = 1e-9
    likelihood_floor: float = 1e-4
    evidence_scale: float = 0.3
    update: str = "accumulate"
    method: str = "clt"
    threads: int = 1

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ConfigError("max_iterations must be >= 1")
        if not 0.0 < self.threshold <= 1.0:
            raise ConfigError("threshold must lie in (0, 1]")
        if not 0.0 <= self.damping < 1.0:
            raise ConfigError("damping must lie in [0, 1)")
        if self.var_floor <= 0:
            raise ConfigError("var_floor must be positive")
        if not 0.0 <= self.likelihood_floor < 1.0:
            raise ConfigError("likelihood_floor must lie in [0, 1)")
        if not 0.0 < self.evidence_scale <= 1.0:
            raise ConfigError("evidence_scale must lie in (0, 1]")
        if self.update not in ("accumulate", "replace"):
            raise ConfigError(f"unknown update rule {self.update!r}")
        if self.method not in ("clt", "exact"):
            raise ConfigError(f"unknown likelihood method {self.method!r}")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")

    @property
    def log_floor(self) -> float:
        return np.log(self.likelihood_floor) if self.likelihood_floor > 0 else -np.inf


@dataclass
class SolverState:
    support: np.ndarray
    prior: np.ndarray
    probs: np.ndarray
    iteration: int = 0
    row_mean: Optional[np.ndarray] = None
    row_var: Optional[np.ndarray] = None
    clamps: int = 0
    resets: int = 0

    @property
    def unknowns(self) -> int:
        return self.probs.shape[0]

    def pmf(self, j: int) -> Pmf:
        return Pmf(self.support, self.probs[j].copy())

    def moments(self):
        mean = self.probs @ self.support
        var = self.probs @ (self.support**2) - mean**2
        return mean, np.maximum(var, 0.0)

    def confidence(self) -> np.ndarray:
        return self.probs.max(axis=1)

    def refresh_rows(self, system: InequalitySystem) -> None:
        mean, var = self.moments()
        self.row_mean, self.row_var = _kernels.row_moments(system.coeffs, mean, var)

    def guess(self) -> np.ndarray:
        # ties go to the smaller magnitude, then to the negative value
        order = np.lexsort((self.support, np.abs(self.support)))
        idx = self.probs[:, order].argmax(axis=1)
        return self.support[order][idx].astype(np.int64)


def init_priors(params, unknowns: Optional[int] = None) -> SolverState:
    """Every unknown starts from the exact CBD(eta) PMF.

    ``params`` is a SchemeParams (eta1 and 2*l*n unknowns) or a bare eta.
    """
    if isinstance(params, SchemeParams):
        eta = params.eta1
        unknowns = params.unknowns if unknowns is None else unknowns
    else:
        eta = int(params)
        if unknowns is None:
            raise ConfigError("unknowns required when passing a bare eta")
    prior = np.tile(cbd_pmf(eta), (unknowns, 1))
    return SolverState(np.arange(-eta, eta + 1, dtype=np.float64), prior, prior.copy())


def _offsets(system: InequalitySystem) -> np.ndarray:
    # continuity correction for an integer-valued sum
    return system.constant - system.tau + 0.5


def likelihood(ineq: Inequality, j: int, v: int, state: SolverState, config: SolverConfig = None) -> float:
    """Gaussian leave-one-out P(inequality holds | x_j = v)."""
    config = config or SolverConfig()
    mean, var = state.moments()
    a = ineq.coeffs.astype(np.float64)
    mu = a @ mean - a[j] * mean[j]
    s2 = (a * a) @ var - a[j] ** 2 * var[j]
    s2 = max(s2, config.var_floor)
    z = (a[j] * v + mu + ineq.constant - ineq.tau + 0.5) / np.sqrt(s2)
    if ineq.relation is Relation.LT:
        z = -z
    return float(max(np.exp(log_ndtr(z)), config.likelihood_floor))


def _sum_pmf(coeffs: np.ndarray, probs: np.ndarray, support: np.ndarray, skip: int):
    """Exact distribution of sum_{j != skip} a_j x_j as (offset, pmf array)."""
    eta = int(support[-1])
    dist = np.ones(1)
    lo = 0
    for j, a in enumerate(coeffs):
        if j == skip or a == 0:
            continue
        a = int(a)
        term = np.zeros(2 * abs(a) * eta + 1)
        term[(support.astype(int) * a + abs(a) * eta)] = probs[j]
        dist = np.convolve(dist, term)
        lo -= abs(a) * eta
    return lo, dist


def exact_likelihood(ineq: Inequality, j: int, v: int, state: SolverState) -> float:
    """P(inequality holds | x_j = v) by exact convolution of the other PMFs."""
    lo, dist = _sum_pmf(ineq.coeffs, state.probs, state.support, j)
    s = lo + np.arange(dist.size) + int(ineq.coeffs[j]) * v + ineq.constant
    ok = s >= ineq.tau if ineq.relation is Relation.GE else s < ineq.tau
    return float(dist[ok].sum())


def _exact_loglik(system: InequalitySystem, state: SolverState, config: SolverConfig):
    L = np.zeros_like(state.probs)
    with np.errstate(divide="ignore"):
        for t in range(len(system)):
            row = system.row(t)
            for j in np.nonzero(row.coeffs)[0]:
                for k, v in enumerate(state.support):
                    p = max(exact_likelihood(row, j, int(v), state), config.likelihood_floor)
                    L[j, k] += np.log(p)
    return L, 0


class PreparedSystem:
    """Inequalities laid out once for repeated kernel calls."""

    def __init__(self, system: InequalitySystem):
        self.system = system
        self.A = np.ascontiguousarray(system.coeffs, dtype=np.int8)
        self.AT = np.ascontiguousarray(self.A.T) if _kernels.numba_enabled() else None
        self.offset = _offsets(system).astype(np.float64)
        self.ge = system.ge.astype(bool)


def _loglik(prep: PreparedSystem, state: SolverState, config: SolverConfig):
    if config.method == "exact":
        return _exact_loglik(prep.system, state, config)
    mean, var = state.moments()
    args = (prep.offset, prep.ge, mean, var, state.support, config.var_floor, config.log_floor)
    if prep.AT is not None:
        if config.threads > 1:
            _kernels.numba.set_num_threads(min(config.threads, _kernels.numba.config.NUMBA_NUM_THREADS))
        return _kernels.loglik_numba(prep.AT, *args, A=prep.A)
    return _kernels.loglik_numpy(prep.A, *args)


def iterate(state: SolverState, system, config: SolverConfig = None) -> SolverState:
    config = config or SolverConfig()
    prep = system if isinstance(system, PreparedSystem) else PreparedSystem(system)
    if len(prep.system) == 0:
        return state
    if prep.A.shape[1] != state.unknowns:
        raise StructuralError(f"system has {prep.A.shape[1]} unknowns, state has {state.unknowns}")
    L, clamps = _loglik(prep, state, config)
    base = state.prior if config.update == "replace" else state.probs
    with np.errstate(divide="ignore"):
        logpost = np.log(base) + config.evidence_scale * L
    top = logpost.max(axis=1, keepdims=True)
    dead = ~np.isfinite(top[:, 0])
    top[dead] = 0.0
    post = np.exp(logpost - top)
    post[dead] = state.prior[dead]
    post /= post.sum(axis=1, keepdims=True)
    if config.damping > 0:
        with np.errstate(divide="ignore"):
            mix = (1 - config.damping) * np.log(post) + config.damping * np.log(state.probs)
        mix -= mix.max(axis=1, keepdims=True)
        post = np.exp(mix)
        post /= post.sum(axis=1, keepdims=True)
    if np.any(post < 0) or np.any(np.abs(post.sum(axis=1) - 1) > 1e-12):
        raise StructuralError("posterior lost normalisation")
    new = SolverState(state.support, state.prior, post, state.iteration + 1,
                      clamps=state.clamps + clamps, resets=state.resets + int(dead.sum()))
    new.refresh_rows(prep.system)
    return new


@dataclass
class SolveResult:
    key_guess: np.ndarray
    confidence: np.ndarray
    iterations: int
    converged: bool
    state: SolverState
    history: list = field(default_factory=list)


def solve(system: InequalitySystem, params, config: SolverConfig = None,
          state: Optional[SolverState] = None, callback=None) -> SolveResult:
    """Iterate until every unknown's top mass reaches the threshold."""
    config = config or SolverConfig()
    state = state or init_priors(params, system.unknowns)
    prep = PreparedSystem(system)
    history = []
    converged = False
    if len(system):
        for _ in range(config.max_iterations):
            state = iterate(state, prep, config)
            conf = state.confidence()
            entry = {"iteration": state.iteration, "min_confidence": float(conf.min()),
                     "converged_fraction": float((conf >= config.threshold).mean())}
            history.append(entry)
            if callback:
                callback(state, entry)
            if conf.min() >= config.threshold:
                converged = True
                break
    return SolveResult(state.guess(), state.confidence(), state.iteration, converged, state, history)


def verify_key(guess, truth) -> float:
    guess, truth = np.asarray(guess), np.asarray(truth)
    if guess.shape != truth.shape:
        raise StructuralError(f"key length mismatch: {guess.shape} vs {truth.shape}")
    if guess.size == 0:
        return 0.0
    return float(np.mean(guess == truth))
