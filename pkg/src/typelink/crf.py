"""Fully-connected pairwise CRF over a document's mentions.

The joint objective sums per-mention unary scores plus one pairwise term per
unordered mention pair; pairwise terms are diagonal-bilinear in the entity
vectors, scaled by 2/(n-1). Max-marginals come from damped synchronous
max-product message passing (kernels module); an exact enumeration oracle
covers small instances for testing, and a traced backward pass supports
differentiating through the unrolled rounds.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .kernels import NEG
from .params import Combiner


@dataclass(frozen=True)
class LbpConfig:
    damping: float = 0.5
    loops: int = 10

    def __post_init__(self):
        if not (0.0 < self.damping <= 1.0):
            raise ValueError(f"damping must be in (0, 1], got {self.damping}")
        if self.loops < 1:
            raise ValueError(f"loops must be >= 1, got {self.loops}")


def pairwise_score(vec_a: np.ndarray, vec_b: np.ndarray, pair_diag: np.ndarray,
                   n_mentions: int) -> float:
    """Pairwise coupling (2/(n-1)) * a . diag . b between two entity vectors."""
    if n_mentions < 2:
        raise ValueError("pairwise score undefined for single-mention documents")
    if vec_a.shape != vec_b.shape or vec_a.shape != pair_diag.shape:
        raise ValueError("dim mismatch in pairwise score")
    return float(2.0 / (n_mentions - 1) * np.sum(vec_a * pair_diag * vec_b))


def _pad(unary: list[np.ndarray], cand_vecs: list[np.ndarray],
         pair_diag: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Pack ragged per-mention arrays into padded tensors plus the phi tensor."""
    n = len(unary)
    nvalid = np.array([len(u) for u in unary], dtype=np.int64)
    L = int(nvalid.max())
    dim = cand_vecs[0].shape[1]
    upad = np.full((n, L), NEG)
    xpad = np.zeros((n, L, dim))
    for i, (u, x) in enumerate(zip(unary, cand_vecs)):
        if not np.all(np.isfinite(u)):
            raise ValueError(f"non-finite unary scores for mention {i}")
        upad[i, : len(u)] = u
        xpad[i, : len(u)] = x
    scaled = xpad * pair_diag
    phi = (2.0 / (n - 1)) * np.einsum("iak,jbk->ijab", scaled, xpad)
    return upad, xpad, phi, nvalid


@dataclass
class LbpResult:
    g_hat: list[np.ndarray]               # per-mention max-marginal estimates
    msg_in: list[np.ndarray]              # per-mention sum of incoming messages
    trace: dict | None = None             # packed tensors + histories when traced


def run_lbp(unary: list[np.ndarray], cand_vecs: list[np.ndarray],
            pair_diag: np.ndarray, config: LbpConfig = LbpConfig(),
            want_trace: bool = False) -> LbpResult:
    """Damped max-product estimates of the per-candidate max-marginals.

    Single-mention documents bypass message passing entirely: g_hat is the
    unary vector and the incoming-message totals are zero.
    """
    n = len(unary)
    if n == 0:
        raise ValueError("empty document")
    if n == 1:
        u = np.asarray(unary[0], dtype=np.float64)
        if not np.all(np.isfinite(u)):
            raise ValueError("non-finite unary scores for mention 0")
        return LbpResult(g_hat=[u.copy()], msg_in=[np.zeros_like(u)])
    upad, xpad, phi, nvalid = _pad(unary, cand_vecs, pair_diag)
    if want_trace:
        g, mbar, mbar_hist, mnorm_hist, amax_hist, bmax_hist = \
            kernels._lbp_rounds_trace_numpy(
                upad, phi, nvalid, config.damping, config.loops)
        trace = {"upad": upad, "xpad": xpad, "phi": phi, "nvalid": nvalid,
                 "mbar_hist": mbar_hist, "mnorm_hist": mnorm_hist,
                 "amax_hist": amax_hist, "bmax_hist": bmax_hist,
                 "damping": config.damping, "loops": config.loops}
    else:
        g, mbar = kernels.lbp_rounds(upad, phi, nvalid, config.damping, config.loops)
        trace = None
    g_hat = [g[i, : nvalid[i]].copy() for i in range(n)]
    msg_in = [g[i, : nvalid[i]] - upad[i, : nvalid[i]] for i in range(n)]
    return LbpResult(g_hat=g_hat, msg_in=msg_in, trace=trace)


def lbp_backward(trace: dict, dg: list[np.ndarray]) -> tuple[list[np.ndarray], np.ndarray]:
    """Backpropagate through the unrolled rounds.

    Takes gradients w.r.t. the per-mention max-marginals and returns gradients
    w.r.t. the unary scores and the phi tensor. Max operations (the message
    maximization and the per-vector normalization) route to their recorded
    argmax; the damped combine splits by its probability-space weights.
    """
    upad = trace["upad"]
    nvalid = trace["nvalid"]
    phi = trace["phi"]
    mbar_hist = trace["mbar_hist"]
    mnorm_hist = trace["mnorm_hist"]
    amax_hist = trace["amax_hist"]
    bmax_hist = trace["bmax_hist"]
    damping = trace["damping"]
    loops = trace["loops"]
    n, L = upad.shape
    valid = np.arange(L)[None, :] < nvalid[:, None]
    off = ~np.eye(n, dtype=bool)
    live = off[:, :, None] & valid[None, :, :]

    d_unary = np.zeros((n, L))
    d_phi = np.zeros_like(phi)
    d_mbar = np.zeros((n, n, L))
    for i in range(n):
        gi = np.zeros(L)
        gi[: nvalid[i]] = dg[i]
        d_unary[i] += gi
        for k in range(n):
            if k != i:
                d_mbar[k, i] += gi

    for t in range(loops - 1, -1, -1):
        if damping >= 1.0:
            d_mnorm = np.where(live, d_mbar, 0.0)
            d_mbar_prev = np.zeros((n, n, L))
        else:
            w_new = damping * np.exp(mnorm_hist[t] - mbar_hist[t + 1])
            w_old = (1.0 - damping) * np.exp(mbar_hist[t] - mbar_hist[t + 1])
            d_mnorm = np.where(live, d_mbar * w_new, 0.0)
            d_mbar_prev = np.where(live, d_mbar * w_old, 0.0)
        # mnorm[i,j,b] = mraw[i,j,b] - mraw[i,j,bmax]
        d_mraw = d_mnorm.copy()
        sums = d_mnorm.sum(axis=2)
        for i in range(n):
            for j in range(n):
                if i != j:
                    d_mraw[i, j, bmax_hist[t, i, j]] -= sums[i, j]
        # mraw[i,j,b] = tot[i,a*] - mbar_prev[j,i,a*] + phi[i,j,a*,b]
        d_tot = np.zeros((n, L))
        for i in range(n):
            for j in range(n):
                if i == j:
                    continue
                for b in range(nvalid[j]):
                    g = d_mraw[i, j, b]
                    if g == 0.0:
                        continue
                    a = amax_hist[t, i, j, b]
                    d_tot[i, a] += g
                    d_mbar_prev[j, i, a] -= g
                    d_phi[i, j, a, b] += g
        # tot[i,a] = unary[i,a] + sum_{k != i} mbar_prev[k,i,a]
        d_unary += d_tot
        for i in range(n):
            for k in range(n):
                if k != i:
                    d_mbar_prev[k, i] += d_tot[i]
        d_mbar = d_mbar_prev

    d_unary = np.where(valid, d_unary, 0.0)
    return [d_unary[i, : nvalid[i]] for i in range(n)], d_phi


def phi_backward_pair_diag(trace: dict, d_phi: np.ndarray) -> np.ndarray:
    """Reduce a phi-tensor gradient to the pairwise diagonal's gradient."""
    xpad = trace["xpad"]
    n = xpad.shape[0]
    return (2.0 / (n - 1)) * np.einsum("ijab,iak,jbk->k", d_phi, xpad, xpad)


def brute_force_max_marginals(unary: list[np.ndarray], cand_vecs: list[np.ndarray],
                              pair_diag: np.ndarray,
                              max_states: int = 10 ** 6) -> list[np.ndarray]:
    """Exact max-marginals by enumerating every joint assignment.

    Builds the full joint score tensor (unary terms plus one pairwise term per
    unordered mention pair) and maxes out all axes but one. Test oracle only;
    refuses state spaces above ``max_states``.
    """
    n = len(unary)
    sizes = [len(u) for u in unary]
    total = 1
    for s in sizes:
        total *= s
    if total > max_states:
        raise ValueError(f"state space {total} exceeds cap {max_states}")
    if n == 1:
        return [np.asarray(unary[0], dtype=np.float64).copy()]
    joint = np.zeros(sizes)
    for i, u in enumerate(unary):
        shape = [1] * n
        shape[i] = sizes[i]
        joint = joint + np.asarray(u, dtype=np.float64).reshape(shape)
    for i in range(n):
        for j in range(i + 1, n):
            pair = (2.0 / (n - 1)) * (cand_vecs[i] * pair_diag) @ cand_vecs[j].T
            shape = [1] * n
            shape[i] = sizes[i]
            shape[j] = sizes[j]
            joint = joint + pair.reshape(shape)
    out = []
    for i in range(n):
        axes = tuple(ax for ax in range(n) if ax != i)
        out.append(joint.max(axis=axes))
    return out


def final_scores(g_hat: np.ndarray, log_priors: np.ndarray, final_mlp: Combiner,
                 normalize: bool = True) -> tuple[np.ndarray, dict]:
    """Final per-candidate score from (max-marginal, prior feature).

    Max-marginals are shifted to a per-mention max of zero before the combiner;
    the shift changes no argmax and keeps the combiner's input range bounded.
    """
    g_hat = np.asarray(g_hat, dtype=np.float64)
    if not np.all(np.isfinite(g_hat)):
        raise ValueError("non-finite max-marginals")
    if normalize:
        ref = int(np.argmax(g_hat))
        g_in = g_hat - g_hat[ref]
    else:
        ref = None
        g_in = g_hat
    feats = np.stack([g_in, log_priors], axis=1)
    rho, mlp_cache = final_mlp.forward(feats)
    return rho, {"mlp": mlp_cache, "ref": ref, "n_cand": len(g_hat)}


def final_scores_backward(cache: dict, final_mlp: Combiner,
                          drho: np.ndarray) -> tuple[dict[str, np.ndarray], np.ndarray]:
    """Gradients of the final scores w.r.t. combiner weights and the max-marginals."""
    grads, dfeats = final_mlp.backward(cache["mlp"], drho)
    dg = dfeats[:, 0].copy()
    if cache["ref"] is not None:
        dg[cache["ref"]] -= dfeats[:, 0].sum()
    return grads, dg
