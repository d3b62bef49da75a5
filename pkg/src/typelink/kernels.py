"""Hot message-passing kernels.

Two interchangeable implementations of the damped max-product rounds: a loop
kernel compiled with numba's @njit and a vectorized pure-numpy twin. The env
flag TYPELINK_NUMBA selects the path ("0"/"false"/"off" forces numpy; default
uses numba when importable). benchmarks/bench_lbp.py compares the two.

Array layout: candidates are padded to a common width L. unary is (n, L) with
padding at NEG; phi[i, j, a, b] holds the pairwise score between candidate a
of mention i and candidate b of mention j (padding 0); messages are (n, n, L)
indexed [source, target, target candidate], zero on the diagonal and padding.
"""
from __future__ import annotations

import math
import os

import numpy as np

NEG = -1e30


def _flag_enabled() -> bool:
    return os.environ.get("TYPELINK_NUMBA", "auto").strip().lower() not in (
        "0", "false", "off", "no")


try:
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    _HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda fn: fn


USE_NUMBA = _HAVE_NUMBA and _flag_enabled()


def _lbp_rounds_loops(unary, phi, nvalid, damping, loops, mbar):
    n, L = unary.shape
    mraw = np.zeros((n, n, L))
    tot = np.zeros((n, L))
    log_d = math.log(damping) if damping < 1.0 else 0.0
    log_1md = math.log(1.0 - damping) if damping < 1.0 else 0.0
    for _ in range(loops):
        for i in range(n):
            for a in range(nvalid[i]):
                s = unary[i, a]
                for k in range(n):
                    if k != i:
                        s += mbar[k, i, a]
                tot[i, a] = s
        for i in range(n):
            for j in range(n):
                if i == j:
                    continue
                for b in range(nvalid[j]):
                    mraw[i, j, b] = NEG
                for a in range(nvalid[i]):
                    base = tot[i, a] - mbar[j, i, a]
                    for b in range(nvalid[j]):
                        v = base + phi[i, j, a, b]
                        if v > mraw[i, j, b]:
                            mraw[i, j, b] = v
                # normalize each message vector to max 0, then damp
                mx = NEG
                for b in range(nvalid[j]):
                    if mraw[i, j, b] > mx:
                        mx = mraw[i, j, b]
                for b in range(nvalid[j]):
                    mraw[i, j, b] -= mx
        if damping >= 1.0:
            for i in range(n):
                for j in range(n):
                    if i == j:
                        continue
                    for b in range(nvalid[j]):
                        mbar[i, j, b] = mraw[i, j, b]
        else:
            for i in range(n):
                for j in range(n):
                    if i == j:
                        continue
                    for b in range(nvalid[j]):
                        x = log_d + mraw[i, j, b]
                        y = log_1md + mbar[i, j, b]
                        hi = x if x > y else y
                        mbar[i, j, b] = hi + math.log(math.exp(x - hi) + math.exp(y - hi))
    g = np.full((n, L), NEG)
    for i in range(n):
        for e in range(nvalid[i]):
            s = unary[i, e]
            for k in range(n):
                if k != i:
                    s += mbar[k, i, e]
            g[i, e] = s
    return g, mbar


_lbp_rounds_jit = njit(cache=True)(_lbp_rounds_loops)


def _valid_mask(nvalid: np.ndarray, L: int) -> np.ndarray:
    return np.arange(L)[None, :] < nvalid[:, None]


def _lbp_rounds_numpy(unary, phi, nvalid, damping, loops, mbar):
    n, L = unary.shape
    valid = _valid_mask(nvalid, L)
    diag = np.eye(n, dtype=bool)
    dead = diag[:, :, None] | ~valid[None, :, :]  # diagonal or padded target candidate
    for _ in range(loops):
        tot = np.where(valid, unary + mbar.sum(axis=0), NEG)
        base = tot[:, None, :] - mbar.transpose(1, 0, 2)  # [i, j, a]
        base = np.where(valid[:, None, :], base, NEG)
        mraw = (base[:, :, :, None] + phi).max(axis=2)    # [i, j, b]
        mraw = mraw - np.where(dead, NEG, mraw).max(axis=2, keepdims=True)
        if damping >= 1.0:
            mbar = np.where(dead, 0.0, mraw)
        else:
            damped = np.logaddexp(math.log(damping) + mraw,
                                  math.log(1.0 - damping) + mbar)
            mbar = np.where(dead, 0.0, damped)
    g = np.where(valid, unary + mbar.sum(axis=0), NEG)
    return g, mbar


def lbp_rounds(unary, phi, nvalid, damping, loops):
    """Run damped synchronous message rounds; returns (beliefs g, messages)."""
    mbar = np.zeros((unary.shape[0], unary.shape[0], unary.shape[1]))
    if USE_NUMBA:
        return _lbp_rounds_jit(unary, phi, nvalid, damping, loops, mbar)
    return _lbp_rounds_numpy(unary, phi, nvalid, damping, loops, mbar)


def lbp_rounds_numpy(unary, phi, nvalid, damping, loops):
    """Pure-numpy path, exposed for twin tests and the benchmark."""
    mbar = np.zeros((unary.shape[0], unary.shape[0], unary.shape[1]))
    return _lbp_rounds_numpy(unary, phi, nvalid, damping, loops, mbar)


def lbp_rounds_numba(unary, phi, nvalid, damping, loops):
    """Compiled path, exposed for twin tests and the benchmark."""
    if not _HAVE_NUMBA:
        raise RuntimeError("numba is not available")
    mbar = np.zeros((unary.shape[0], unary.shape[0], unary.shape[1]))
    return _lbp_rounds_jit(unary, phi, nvalid, damping, loops, mbar)


# ---------------------------------------------------------------------------
# traced variant: records per-round state for backpropagation through the rounds


def _lbp_rounds_trace_numpy(unary, phi, nvalid, damping, loops):
    n, L = unary.shape
    valid = _valid_mask(nvalid, L)
    diag = np.eye(n, dtype=bool)
    dead = diag[:, :, None] | ~valid[None, :, :]
    mbar = np.zeros((n, n, L))
    mbar_hist = np.zeros((loops + 1, n, n, L))
    mnorm_hist = np.zeros((loops, n, n, L))
    amax_hist = np.zeros((loops, n, n, L), dtype=np.int64)
    bmax_hist = np.zeros((loops, n, n), dtype=np.int64)
    for t in range(loops):
        tot = np.where(valid, unary + mbar.sum(axis=0), NEG)
        base = tot[:, None, :] - mbar.transpose(1, 0, 2)
        base = np.where(valid[:, None, :], base, NEG)
        stacked = base[:, :, :, None] + phi
        mraw = stacked.max(axis=2)
        amax = stacked.argmax(axis=2)
        masked = np.where(dead, NEG, mraw)
        bmax = masked.argmax(axis=2)
        mnorm = mraw - masked.max(axis=2, keepdims=True)
        if damping >= 1.0:
            mbar = np.where(dead, 0.0, mnorm)
        else:
            damped = np.logaddexp(math.log(damping) + mnorm,
                                  math.log(1.0 - damping) + mbar)
            mbar = np.where(dead, 0.0, damped)
        mnorm_hist[t] = np.where(dead, 0.0, mnorm)
        amax_hist[t] = amax
        bmax_hist[t] = bmax
        mbar_hist[t + 1] = mbar
    g = np.where(valid, unary + mbar.sum(axis=0), NEG)
    return g, mbar, mbar_hist, mnorm_hist, amax_hist, bmax_hist
