"""Per-candidate local features.

The long-range context score attends over bag-of-words context: each in-vocab
word is scored by its best candidate under a diagonal bilinear form, the top R
words are kept, softmax weights pool their embeddings into h, and a candidate
scores x_e . diag . h. The similarity feature is the cosine between a
candidate's pooled embedding and the mention's own context vector.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import EmbeddingTable, Mention, log_prior
from .embeddings import cosine
from .params import LOCAL_FEATURES, ModelParams, combine_local

TOP_WORDS = 25       # R, context words kept by the attention
SIM_FLOOR = -1.0     # similarity for candidates absent from the pooled table


class Counters(dict):
    """Plain dict of event counters with a default of zero."""

    def bump(self, key: str, by: int = 1) -> None:
        self[key] = self.get(key, 0) + by


@dataclass
class Resources:
    """Read-only lookup bundle plus scoring knobs."""

    word_table: EmbeddingTable
    entity_table: EmbeddingTable
    sim_table: EmbeddingTable | None = None
    mention_vecs: dict[str, np.ndarray] | None = None
    entity_types: dict[str, frozenset[str]] | None = None
    sim_floor: float = SIM_FLOOR
    top_words: int = TOP_WORDS
    final_raw_prior: bool = False  # feed raw priors (not logs) to the final combiner


@dataclass
class AttentionCache:
    empty: bool
    word_vecs: np.ndarray | None = None    # (r, d) kept word embeddings
    cand_vecs: np.ndarray | None = None    # (l, d) candidate entity embeddings
    weights: np.ndarray | None = None      # (r,) softmax weights
    best_cand: np.ndarray | None = None    # (r,) argmax candidate per kept word
    kept_scores: np.ndarray | None = None  # (r,) attention logits of kept words


def attention_context_repr(
    mention: Mention,
    word_table: EmbeddingTable,
    entity_table: EmbeddingTable,
    attn_diag: np.ndarray,
    top_words: int = TOP_WORDS,
) -> tuple[np.ndarray, AttentionCache]:
    """Attention-pooled context vector h for one mention.

    Out-of-vocabulary context words are dropped; if none remain, h is the zero
    vector and the cache is flagged empty.
    """
    dim = word_table.dim
    in_vocab = [w for w in mention.long_ctx if w in word_table]
    if not in_vocab:
        return np.zeros(dim), AttentionCache(empty=True)
    word_vecs = np.stack([word_table.row(w) for w in in_vocab]).astype(np.float64)
    cand_vecs = np.stack(
        [entity_table.row(c.entity) for c in mention.candidates]
    ).astype(np.float64)
    # score[e, w] = x_e . diag . x_w; each word keeps its best candidate
    scores = (cand_vecs * attn_diag) @ word_vecs.T
    word_scores = scores.max(axis=0)
    best_cand = scores.argmax(axis=0)
    order = np.argsort(-word_scores, kind="stable")
    keep = order[: min(top_words, len(in_vocab))]
    kept_scores = word_scores[keep]
    shifted = kept_scores - kept_scores.max()
    weights = np.exp(shifted)
    weights /= weights.sum()
    h = weights @ word_vecs[keep]
    cache = AttentionCache(
        empty=False,
        word_vecs=word_vecs[keep],
        cand_vecs=cand_vecs,
        weights=weights,
        best_cand=best_cand[keep],
        kept_scores=kept_scores,
    )
    return h, cache


def attention_backward(cache: AttentionCache, dh: np.ndarray) -> np.ndarray:
    """Gradient of sum(dh * h) w.r.t. the attention diagonal."""
    if cache.empty:
        raise ValueError("no gradient through an empty attention context")
    dweights = cache.word_vecs @ dh
    inner = float(cache.weights @ dweights)
    dscores = cache.weights * (dweights - inner)
    d_attn = np.zeros_like(dh)
    for t in range(len(dscores)):
        e = cache.best_cand[t]
        d_attn += dscores[t] * (cache.cand_vecs[e] * cache.word_vecs[t])
    return d_attn


def long_ctx_scores(cand_vecs: np.ndarray, h: np.ndarray, ctx_diag: np.ndarray) -> np.ndarray:
    """Bilinear context score per candidate: x_e . diag . h."""
    if cand_vecs.shape[1] != h.shape[0] or h.shape[0] != ctx_diag.shape[0]:
        raise ValueError("dim mismatch in long-range context score")
    return (cand_vecs * ctx_diag) @ h


def long_ctx_backward(
    cand_vecs: np.ndarray, h: np.ndarray, ctx_diag: np.ndarray, dscores: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Gradients w.r.t. the diagonal and h for per-candidate score gradients."""
    d_diag = (cand_vecs * h).T @ dscores
    dh = (cand_vecs * ctx_diag).T @ dscores
    return d_diag, dh


def sim_scores(
    mention: Mention,
    sim_table: EmbeddingTable,
    ctx_vec: np.ndarray,
    floor: float = SIM_FLOOR,
    counters: Counters | None = None,
) -> np.ndarray:
    """Cosine between each candidate's pooled embedding and the mention context vector.

    Candidates missing from the pooled table score the floor value; a counter
    records how often that happens.
    """
    out = np.empty(len(mention.candidates))
    for i, cand in enumerate(mention.candidates):
        if cand.entity in sim_table:
            out[i] = cosine(sim_table.row(cand.entity), ctx_vec)
        else:
            out[i] = floor
            if counters is not None:
                counters.bump("sim_floor")
    return out


@dataclass
class MentionScores:
    """Per-candidate feature and score arrays, ordered like Mention.candidates."""

    long_ctx: np.ndarray
    log_prior: np.ndarray
    combined: np.ndarray
    sim: np.ndarray | None = None
    jaccard: np.ndarray | None = None

    def argmax(self) -> int:
        return int(np.argmax(self.combined))


def local_features(mode: str, scores: "MentionScores") -> np.ndarray:
    """Stack the combiner inputs for a local-style mode, in contract order."""
    columns = {
        "long_ctx": scores.long_ctx,
        "sim": scores.sim,
        "log_prior": scores.log_prior,
        "jaccard": scores.jaccard,
    }
    return np.stack([columns[name] for name in LOCAL_FEATURES[mode]], axis=1)


def score_mention_local(
    mention: Mention,
    res: Resources,
    params: ModelParams,
    counters: Counters | None = None,
) -> MentionScores:
    """Local candidate scores for baseline or similarity-augmented modes."""
    mode = params.mode
    if mode not in ("baseline", "local"):
        raise ValueError(f"score_mention_local expects a local mode, got {mode!r}")
    h, cache = attention_context_repr(
        mention, res.word_table, res.entity_table, params.attn_diag, res.top_words)
    if cache.empty and counters is not None:
        counters.bump("empty_attention")
    cand_vecs = np.stack(
        [res.entity_table.row(c.entity) for c in mention.candidates]
    ).astype(np.float64)
    long_scores = long_ctx_scores(cand_vecs, h, params.ctx_diag)
    priors = np.array([log_prior(c.prior) for c in mention.candidates])
    sims = None
    if mode == "local":
        if res.sim_table is None:
            raise ValueError("similarity mode needs a pooled entity table")
        if res.mention_vecs is None or mention.id not in res.mention_vecs:
            raise ValueError(f"missing context vector for mention {mention.id!r}")
        sims = sim_scores(mention, res.sim_table, res.mention_vecs[mention.id],
                          res.sim_floor, counters)
    scores = MentionScores(long_ctx=long_scores, log_prior=priors,
                           combined=np.zeros(len(mention.candidates)), sim=sims)
    scores.combined = combine_local(local_features(mode, scores), params.local_mlp)
    return scores
