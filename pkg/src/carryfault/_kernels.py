"""Likelihood accumulation for the inequality solver.

Two interchangeable backends compute, for every unknown j and candidate
value v, the sum over inequalities of log P(inequality | x_j = v) under
the leave-one-out Gaussian surrogate. The numba backend is used when
available unless ``CARRYFAULT_NUMBA=0`` is set.
"""
from __future__ import annotations

import math
import os

import numpy as np
from scipy.special import log_ndtr

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None
else:
    # the default layer probes an outdated TBB and warns; workqueue is always present
    if "NUMBA_THREADING_LAYER" not in os.environ:
        numba.config.THREADING_LAYER = "workqueue"


def numba_enabled() -> bool:
    flag = os.environ.get("CARRYFAULT_NUMBA", "1").strip().lower()
    return numba is not None and flag not in ("0", "false", "no", "off")


def row_moments(A: np.ndarray, mean: np.ndarray, var: np.ndarray, chunk: int = 4096):
    """mu_t = sum_j a_tj E[x_j] and s2_t = sum_j a_tj^2 Var[x_j]."""
    mu = np.empty(A.shape[0])
    s2 = np.empty(A.shape[0])
    for lo in range(0, A.shape[0], chunk):
        a = A[lo:lo + chunk].astype(np.float64)
        mu[lo:lo + chunk] = a @ mean
        s2[lo:lo + chunk] = (a * a) @ var
    return mu, s2


def loglik_numpy(A, offset, ge, mean, var, vals, var_floor, log_floor, chunk=128):
    """Reference backend; ``offset`` is constant - tau + 0.5 per row."""
    psi, V = A.shape[1], vals.size
    mu, s2 = row_moments(A, mean, var)
    L = np.zeros((psi, V))
    clamps = 0
    sgn = np.where(ge, 1.0, -1.0)
    for lo in range(0, A.shape[0], chunk):
        a = A[lo:lo + chunk].astype(np.float64)
        loo_mu = mu[lo:lo + chunk, None] - a * mean
        loo_var = s2[lo:lo + chunk, None] - a * a * var
        low = loo_var < var_floor
        clamps += int(np.count_nonzero(low & (a != 0)))
        sd = np.sqrt(np.where(low, var_floor, loo_var))
        base = (loo_mu + offset[lo:lo + chunk, None]) / sd
        z = base[..., None] + (a / sd)[..., None] * vals
        z *= sgn[lo:lo + chunk, None, None]
        lp = log_ndtr(z)
        if log_floor > -np.inf:
            np.maximum(lp, log_floor, out=lp)
        lp[a == 0] = 0.0
        L += lp.sum(axis=0)
    return L, clamps


# log Phi on [-40, 10] as second-order Taylor patches, absolute error < 3e-9
_TAB_LO, _TAB_HI, _TAB_RES = -40.0, 10.0, 256


def _build_table() -> np.ndarray:
    z = _TAB_LO + np.arange(int((_TAB_HI - _TAB_LO) * _TAB_RES) + 2) / _TAB_RES
    f = log_ndtr(z)
    mills = np.exp(-0.5 * z * z - 0.5 * np.log(2 * np.pi) - f)
    return np.ascontiguousarray(np.stack([f, mills, -mills * (z + mills)], axis=1))


LOG_NDTR_TABLE = _build_table()

if numba is not None:
    @numba.njit(cache=True)
    def _log_ndtr_scalar(z, tab):
        if z >= _TAB_HI:
            return 0.0
        if z <= _TAB_LO:
            z2 = z * z
            series = 1.0 - 1.0 / z2 + 3.0 / (z2 * z2) - 15.0 / (z2 * z2 * z2)
            return -0.5 * z2 - math.log(-z) - 0.9189385332046727 + math.log(series)
        u = (z - _TAB_LO) * _TAB_RES
        i = int(u)
        h = (u - i) / _TAB_RES
        return tab[i, 0] + h * (tab[i, 1] + 0.5 * h * tab[i, 2])

    @numba.njit(cache=True)
    def _log_ndtr_vec(z, tab):
        out = np.empty_like(z)
        for i in range(z.size):
            out[i] = _log_ndtr_scalar(z[i], tab)
        return out

    def log_ndtr_table(z):
        """Tabulated log Phi used by the compiled kernel (for testing)."""
        z = np.ascontiguousarray(z, dtype=np.float64)
        return _log_ndtr_vec(z.ravel(), LOG_NDTR_TABLE).reshape(z.shape)

    @numba.njit(cache=True, parallel=True)
    def _loglik_nb(AT, offset, sgn, mean, var, vals, var_floor, log_floor, mu, s2, tab):
        psi, omega = AT.shape
        V = vals.size
        L = np.zeros((psi, V))
        clamps = np.zeros(psi, dtype=np.int64)
        for j in numba.prange(psi):
            ej = mean[j]
            vj = var[j]
            for t in range(omega):
                a = AT[j, t]
                if a == 0:
                    continue
                af = float(a)
                lv = s2[t] - af * af * vj
                if lv < var_floor:
                    lv = var_floor
                    clamps[j] += 1
                sd = math.sqrt(lv)
                base = (mu[t] - af * ej + offset[t]) / sd
                step = af / sd
                sg = sgn[t]
                for k in range(V):
                    lp = _log_ndtr_scalar(sg * (base + step * vals[k]), tab)
                    if lp < log_floor:
                        lp = log_floor
                    L[j, k] += lp
        return L, clamps.sum()


def loglik_numba(AT, offset, ge, mean, var, vals, var_floor, log_floor, A=None):
    """``AT`` is the transposed (unknowns x rows) int8 coefficient matrix."""
    if A is None:
        A = np.ascontiguousarray(AT.T)
    mu, s2 = row_moments(A, mean, var)
    sgn = np.where(ge, 1.0, -1.0)
    L, clamps = _loglik_nb(AT, offset.astype(np.float64), sgn, mean, var, vals.astype(np.float64),
                           float(var_floor), float(log_floor), mu, s2, LOG_NDTR_TABLE)
    return L, int(clamps)
