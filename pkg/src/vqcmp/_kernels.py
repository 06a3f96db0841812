"""Hot numeric kernels for pairwise-preference score fitting.

The log-posterior, gradient, and Hessian sweeps are O(n^2) over the count
matrix and dominate fitting time once the item count grows past a few
hundred. They compile with numba by default; set VQCMP_DISABLE_NUMBA=1 to
select the pure-numpy path (identical results, no JIT warmup, and the
baseline in benchmarks/bench_map_fit.py). `backend_name()` reports which
path is live.

Conventions: `s` is the score vector, `a` the effective count matrix
(wins plus ties, zero diagonal), `inv_var` the prior precision. The
pairwise model is logistic: P(i beats j) = sigmoid(s_i - s_j).
"""

from __future__ import annotations

import math
import os

import numpy as np


def _flag_set(name: str) -> bool:
    return os.environ.get(name, "").strip().lower() not in ("", "0", "false", "no")


def _logpost_grad_numpy(s: np.ndarray, a: np.ndarray, inv_var: float):
    d = s[:, None] - s[None, :]
    sig = np.empty_like(d)
    pos = d >= 0
    sig[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    ed = np.exp(d[~pos])
    sig[~pos] = ed / (1.0 + ed)
    log_sig = -np.logaddexp(0.0, -d)
    value = float((a * log_sig).sum() - 0.5 * inv_var * (s @ s))
    grad = (a * (1.0 - sig)).sum(axis=1) - (a.T * sig).sum(axis=1) - inv_var * s
    return value, grad


def _hessian_numpy(s: np.ndarray, a: np.ndarray, inv_var: float) -> np.ndarray:
    d = s[:, None] - s[None, :]
    sig = np.empty_like(d)
    pos = d >= 0
    sig[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    ed = np.exp(d[~pos])
    sig[~pos] = ed / (1.0 + ed)
    h = (a + a.T) * sig * (1.0 - sig)
    np.fill_diagonal(h, 0.0)
    diag = -h.sum(axis=1) - inv_var
    np.fill_diagonal(h, diag)
    return h


def _logpost_grad_loop(s, a, inv_var):
    n = s.shape[0]
    value = -0.5 * inv_var * np.dot(s, s)
    grad = -inv_var * s
    for i in range(n):
        for j in range(i + 1, n):
            aij = a[i, j]
            aji = a[j, i]
            if aij == 0.0 and aji == 0.0:
                continue
            d = s[i] - s[j]
            if d >= 0.0:
                lse_md = math.log1p(math.exp(-d))  # log(1 + e^-d)
                lse_pd = d + lse_md
                sig = 1.0 / (1.0 + math.exp(-d))
            else:
                lse_pd = math.log1p(math.exp(d))
                lse_md = -d + lse_pd
                ed = math.exp(d)
                sig = ed / (1.0 + ed)
            value += -aij * lse_md - aji * lse_pd
            g = aij * (1.0 - sig) - aji * sig
            grad[i] += g
            grad[j] -= g
    return value, grad


def _hessian_loop(s, a, inv_var):
    n = s.shape[0]
    h = np.zeros((n, n))
    for i in range(n):
        h[i, i] = -inv_var
    for i in range(n):
        for j in range(i + 1, n):
            b = a[i, j] + a[j, i]
            if b == 0.0:
                continue
            d = s[i] - s[j]
            if d >= 0.0:
                sig = 1.0 / (1.0 + math.exp(-d))
            else:
                ed = math.exp(d)
                sig = ed / (1.0 + ed)
            w = b * sig * (1.0 - sig)
            h[i, i] -= w
            h[j, j] -= w
            h[i, j] += w
            h[j, i] += w
    return h


_BACKEND = "numpy"
logpost_grad = _logpost_grad_numpy
hessian = _hessian_numpy

if not _flag_set("VQCMP_DISABLE_NUMBA"):
    try:
        from numba import njit

        logpost_grad = njit(cache=True)(_logpost_grad_loop)
        hessian = njit(cache=True)(_hessian_loop)
        _BACKEND = "numba"
    except ImportError:
        pass


def backend_name() -> str:
    return _BACKEND


def numpy_kernels():
    """The fallback pair regardless of the active backend (for benchmarks/tests)."""
    return _logpost_grad_numpy, _hessian_numpy
