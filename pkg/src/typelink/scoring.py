"""Per-document forward scoring and manual backprop for every model variant.

Local-style variants score each candidate from stacked features through one
combiner. The global variant combines (long-range, similarity) into CRF unary
scores, estimates max-marginals with message passing, and rescores with the
prior through a final combiner. Gradients flow through combiners, the
attention pooling, and the bilinear scores; through message passing they
either treat messages as constants of the current parameters ("stop", the
default) or unroll the recorded rounds ("unroll").
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import entity_types
from .crf import (LbpConfig, final_scores, final_scores_backward, lbp_backward,
                  phi_backward_pair_diag, run_lbp)
from .data import Document, Mention, log_prior
from .local import (AttentionCache, Counters, MentionScores, Resources,
                    attention_backward, attention_context_repr, local_features,
                    long_ctx_backward, long_ctx_scores, sim_scores)
from .params import LOCAL_FEATURES, ModelParams

GRAD_MODES = ("stop", "unroll")


@dataclass
class MentionCache:
    attention: AttentionCache
    cand_vecs: np.ndarray
    h: np.ndarray
    mlp: dict | None = None      # local_mlp or unary_mlp cache
    final: dict | None = None


@dataclass
class DocumentForward:
    doc: Document
    mode: str
    mention_scores: list[MentionScores]
    scores: list[np.ndarray]                 # ranking scores, one array per mention
    g_hat: list[np.ndarray] | None = None
    caches: list[MentionCache] = field(default_factory=list)
    lbp_trace: dict | None = None
    msg_in: list[np.ndarray] | None = None

    def predictions(self) -> list[int]:
        return [int(np.argmax(s)) for s in self.scores]


def _mention_features(mention: Mention, res: Resources, params: ModelParams,
                      counters: Counters | None) -> tuple[MentionScores, MentionCache]:
    mode = params.mode
    h, att_cache = attention_context_repr(
        mention, res.word_table, res.entity_table, params.attn_diag, res.top_words)
    if att_cache.empty and counters is not None:
        counters.bump("empty_attention")
    cand_vecs = np.stack(
        [res.entity_table.row(c.entity) for c in mention.candidates]
    ).astype(np.float64)
    long_scores = long_ctx_scores(cand_vecs, h, params.ctx_diag)
    priors = np.array([log_prior(c.prior) for c in mention.candidates])
    sims = None
    jaccard = None
    if mode in ("local", "local_global"):
        if res.sim_table is None:
            raise ValueError(f"mode {mode!r} needs a pooled entity table")
        if res.mention_vecs is None or mention.id not in res.mention_vecs:
            raise ValueError(f"missing context vector for mention {mention.id!r}")
        sims = sim_scores(mention, res.sim_table, res.mention_vecs[mention.id],
                          res.sim_floor, counters)
    if mode in ("typed_oracle", "typed_predict"):
        jaccard = entity_types.jaccard_features(mention, res, mode, counters)
    scores = MentionScores(long_ctx=long_scores, log_prior=priors,
                           combined=np.zeros(len(mention.candidates)),
                           sim=sims, jaccard=jaccard)
    cache = MentionCache(attention=att_cache, cand_vecs=cand_vecs, h=h)
    return scores, cache


def forward_document(doc: Document, res: Resources, params: ModelParams,
                     lbp: LbpConfig = LbpConfig(), counters: Counters | None = None,
                     want_trace: bool = False,
                     fixed_msg_in: list[np.ndarray] | None = None) -> DocumentForward:
    """Score every candidate of every mention in one document.

    ``fixed_msg_in`` replaces message passing with frozen incoming-message
    totals (used by the stop-gradient finite-difference oracle).
    """
    mode = params.mode
    per_mention = []
    caches = []
    for mention in doc.mentions:
        ms, cache = _mention_features(mention, res, params, counters)
        per_mention.append(ms)
        caches.append(cache)

    if mode in LOCAL_FEATURES:
        for ms, cache in zip(per_mention, caches):
            feats = local_features(mode, ms)
            combined, mlp_cache = params.local_mlp.forward(feats)
            ms.combined = combined
            cache.mlp = mlp_cache
        return DocumentForward(doc=doc, mode=mode, mention_scores=per_mention,
                               scores=[ms.combined for ms in per_mention],
                               caches=caches)

    # local_global: combiner unary -> max-marginals -> final rescoring
    unary = []
    for ms, cache in zip(per_mention, caches):
        feats = np.stack([ms.long_ctx, ms.sim], axis=1)
        u, mlp_cache = params.unary_mlp.forward(feats)
        ms.combined = u
        cache.mlp = mlp_cache
        unary.append(u)
    if fixed_msg_in is not None:
        g_hat = [u + m for u, m in zip(unary, fixed_msg_in)]
        msg_in = fixed_msg_in
        trace = None
    else:
        result = run_lbp(unary, [c.cand_vecs for c in caches], params.pair_diag,
                         lbp, want_trace=want_trace)
        g_hat = result.g_hat
        msg_in = result.msg_in
        trace = result.trace
    scores = []
    for ms, cache, g, mention in zip(per_mention, caches, g_hat, doc.mentions):
        if res.final_raw_prior:
            prior_feat = np.array([c.prior for c in mention.candidates])
        else:
            prior_feat = ms.log_prior
        rho, fin_cache = final_scores(g, prior_feat, params.final_mlp)
        cache.final = fin_cache
        scores.append(rho)
    return DocumentForward(doc=doc, mode=mode, mention_scores=per_mention,
                           scores=scores, g_hat=g_hat, caches=caches,
                           lbp_trace=trace, msg_in=msg_in)


def _zero_grads(params: ModelParams) -> dict[str, np.ndarray]:
    return {name: np.zeros_like(arr) for name, arr in params.blocks().items()}


def _accumulate(grads: dict[str, np.ndarray], prefix: str,
                mlp_grads: dict[str, np.ndarray]) -> None:
    for fld, g in mlp_grads.items():
        grads[f"{prefix}.{fld}"] += g


def _local_feature_backward(fwd: DocumentForward, params: ModelParams,
                            grads: dict[str, np.ndarray], idx: int,
                            d_long: np.ndarray) -> None:
    """Push per-candidate long-range score gradients down to the diagonals."""
    cache = fwd.caches[idx]
    d_diag, dh = long_ctx_backward(cache.cand_vecs, cache.h, params.ctx_diag, d_long)
    grads["ctx_diag"] += d_diag
    if not cache.attention.empty:
        grads["attn_diag"] += attention_backward(cache.attention, dh)


def backward_document(fwd: DocumentForward, res: Resources, params: ModelParams,
                      dscores: list[np.ndarray],
                      grad_mode: str = "stop") -> dict[str, np.ndarray]:
    """Gradients of sum_i(dscores_i . scores_i) w.r.t. every parameter block."""
    if grad_mode not in GRAD_MODES:
        raise ValueError(f"grad_mode must be one of {GRAD_MODES}")
    mode = fwd.mode
    grads = _zero_grads(params)

    if mode in LOCAL_FEATURES:
        feature_names = LOCAL_FEATURES[mode]
        long_col = feature_names.index("long_ctx")
        for idx, dout in enumerate(dscores):
            if not np.any(dout):
                continue
            mlp_grads, dfeats = params.local_mlp.backward(fwd.caches[idx].mlp, dout)
            _accumulate(grads, "local_mlp", mlp_grads)
            _local_feature_backward(fwd, params, grads, idx, dfeats[:, long_col])
        return grads

    # final combiner back to max-marginals
    dg_list = []
    for idx, dout in enumerate(dscores):
        fin_grads, dg = final_scores_backward(fwd.caches[idx].final, params.final_mlp, dout)
        _accumulate(grads, "final_mlp", fin_grads)
        dg_list.append(dg)

    # max-marginals back to unary scores (and the coupling when unrolled)
    if grad_mode == "unroll" and len(fwd.doc.mentions) > 1:
        if fwd.lbp_trace is None:
            raise ValueError("unroll gradients need a traced forward pass")
        d_unary, d_phi = lbp_backward(fwd.lbp_trace, dg_list)
        grads["pair_diag"] += phi_backward_pair_diag(fwd.lbp_trace, d_phi)
    else:
        d_unary = dg_list  # messages treated as constants of the parameters

    for idx, du in enumerate(d_unary):
        if not np.any(du):
            continue
        mlp_grads, dfeats = params.unary_mlp.backward(fwd.caches[idx].mlp, du)
        _accumulate(grads, "unary_mlp", mlp_grads)
        _local_feature_backward(fwd, params, grads, idx, dfeats[:, 0])
    return grads


def score_dataset(dataset: list[Document], res: Resources, params: ModelParams,
                  lbp: LbpConfig = LbpConfig(), threads: int = 1,
                  counters: Counters | None = None) -> list[DocumentForward]:
    """Score every document, optionally across a thread pool, in dataset order."""
    per_doc_counters = [Counters() for _ in dataset]

    def job(idx: int) -> DocumentForward:
        return forward_document(dataset[idx], res, params, lbp, per_doc_counters[idx])

    if threads <= 1 or len(dataset) <= 1:
        results = [job(i) for i in range(len(dataset))]
    else:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(job, range(len(dataset))))
    if counters is not None:
        for c in per_doc_counters:
            for key, val in c.items():
                counters.bump(key, val)
    return results
