"""Explicit entity-type features and the linear type probe.

The Jaccard feature compares a mention's type set against each candidate's;
in the oracle setting the mention inherits its gold entity's types, in the
predict setting it uses types supplied with the dataset (the output of an
external typing system). The probe is a one-layer sigmoid classifier over
frozen entity embeddings, measuring how much type information they carry.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .data import EmbeddingTable, Mention
from .local import Counters, MentionScores, Resources, attention_context_repr, long_ctx_scores
from .optim import Adam
from .params import ModelParams, combine_local
from .data import log_prior


def jaccard_sim(a: Iterable[str], b: Iterable[str]) -> float:
    """|a & b| / |a | b|; two empty sets score 0."""
    sa, sb = set(a), set(b)
    union = sa | sb
    if not union:
        return 0.0
    return len(sa & sb) / len(union)


def mention_type_set(mention: Mention, res: Resources, mode: str) -> frozenset[str]:
    if mode == "typed_oracle":
        if mention.gold is None:
            raise ValueError(f"oracle typing needs a gold entity for mention {mention.id!r}")
        if res.entity_types is None or mention.gold not in res.entity_types:
            raise ValueError(f"oracle typing: no type entry for gold entity {mention.gold!r}")
        return res.entity_types[mention.gold]
    if mode == "typed_predict":
        if mention.mention_types is None:
            raise ValueError(f"predict typing needs mention_types for mention {mention.id!r}")
        return mention.mention_types
    raise ValueError(f"not a typed mode: {mode!r}")


def jaccard_features(mention: Mention, res: Resources, mode: str,
                     counters: Counters | None = None) -> np.ndarray:
    """Per-candidate Jaccard similarity against the mention's type set."""
    if res.entity_types is None:
        raise ValueError("typed modes need an entity type map")
    tm = mention_type_set(mention, res, mode)
    out = np.empty(len(mention.candidates))
    for i, cand in enumerate(mention.candidates):
        te = res.entity_types.get(cand.entity)
        if te is None:
            out[i] = 0.0
            if counters is not None:
                counters.bump("missing_candidate_types")
        else:
            out[i] = jaccard_sim(tm, te)
    return out


def score_mention_typed(mention: Mention, res: Resources, params: ModelParams,
                        counters: Counters | None = None) -> MentionScores:
    """Candidate scores from (long-range context, Jaccard) through the combiner."""
    if params.mode not in ("typed_oracle", "typed_predict"):
        raise ValueError(f"score_mention_typed expects a typed mode, got {params.mode!r}")
    h, cache = attention_context_repr(
        mention, res.word_table, res.entity_table, params.attn_diag, res.top_words)
    if cache.empty and counters is not None:
        counters.bump("empty_attention")
    cand_vecs = np.stack(
        [res.entity_table.row(c.entity) for c in mention.candidates]
    ).astype(np.float64)
    long_scores = long_ctx_scores(cand_vecs, h, params.ctx_diag)
    jacc = jaccard_features(mention, res, params.mode, counters)
    feats = np.stack([long_scores, jacc], axis=1)
    combined = combine_local(feats, params.local_mlp)
    priors = np.array([log_prior(c.prior) for c in mention.candidates])
    return MentionScores(long_ctx=long_scores, log_prior=priors,
                         combined=combined, jaccard=jacc)


# ---------------------------------------------------------------------------
# type probe


@dataclass
class ProbeModel:
    type_ids: tuple[str, ...]
    W: np.ndarray            # (num_types, dim)
    b: np.ndarray            # (1,) shared bias, or (num_types,) with per-type biases

    def logits(self, X: np.ndarray) -> np.ndarray:
        return X @ self.W.T + self.b

    def predict(self, X: np.ndarray, threshold: float = 0.5) -> np.ndarray:
        return _sigmoid(self.logits(X)) >= threshold


@dataclass
class ProbeConfig:
    seed: int = 0
    lr: float = 1e-3
    max_epochs: int = 200
    patience: int = 6        # stop after this many dev epochs without improvement
    threshold: float = 0.5
    split: tuple[float, float, float] = (0.8, 0.1, 0.1)
    per_type_bias: bool = False
    batch_size: int = 32


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _bce(z: np.ndarray, t: np.ndarray) -> float:
    # softplus(z) - t*z, summed over types, averaged over entities
    per = np.logaddexp(0.0, z) - t * z
    return float(per.sum(axis=1).mean())


def label_matrix(entities: list[str], type_map: dict[str, frozenset[str]],
                 type_ids: tuple[str, ...]) -> np.ndarray:
    index = {t: j for j, t in enumerate(type_ids)}
    T = np.zeros((len(entities), len(type_ids)))
    for i, e in enumerate(entities):
        for t in type_map[e]:
            T[i, index[t]] = 1.0
    return T


def split_entities(entities: list[str], split: tuple[float, float, float],
                   seed: int) -> tuple[list[str], list[str], list[str]]:
    rng = np.random.Generator(np.random.PCG64(seed))
    order = rng.permutation(len(entities))
    n_train = int(round(split[0] * len(entities)))
    n_dev = int(round(split[1] * len(entities)))
    train = [entities[i] for i in order[:n_train]]
    dev = [entities[i] for i in order[n_train:n_train + n_dev]]
    test = [entities[i] for i in order[n_train + n_dev:]]
    return train, dev, test


def probe_train(table: EmbeddingTable, type_map: dict[str, frozenset[str]],
                config: ProbeConfig = ProbeConfig()) -> tuple[ProbeModel, dict]:
    """Fit the probe with minibatch adaptive-moment steps and dev early stopping.

    Returns the parameters of the best dev-loss epoch and a history dict with
    per-epoch train/dev losses and the split.
    """
    labeled = [e for e in table.ids if e in type_map]
    if not labeled:
        raise ValueError("no labeled entities to train on")
    type_ids = tuple(sorted({t for e in labeled for t in type_map[e]}))
    if not type_ids:
        raise ValueError("type map contains no types")
    train_e, dev_e, test_e = split_entities(labeled, config.split, config.seed)
    if not train_e or not dev_e:
        raise ValueError("empty train or dev split")

    def matrix(ents):
        return np.stack([table.row(e) for e in ents]).astype(np.float64)

    X_tr, T_tr = matrix(train_e), label_matrix(train_e, type_map, type_ids)
    X_dev, T_dev = matrix(dev_e), label_matrix(dev_e, type_map, type_ids)

    n_bias = len(type_ids) if config.per_type_bias else 1
    model = ProbeModel(type_ids=type_ids,
                       W=np.zeros((len(type_ids), table.dim)),
                       b=np.zeros(n_bias))
    blocks = {"probe.W": model.W, "probe.b": model.b}
    opt = Adam(blocks, lr=config.lr)
    rng = np.random.Generator(np.random.PCG64(config.seed + 17))
    best = {k: v.copy() for k, v in blocks.items()}
    best_dev = _bce(model.logits(X_dev), T_dev)
    history = {"train_loss": [], "dev_loss": [], "best_epoch": 0,
               "split": {"train": train_e, "dev": dev_e, "test": test_e}}
    stale = 0
    batch = max(1, config.batch_size)
    for epoch in range(config.max_epochs):
        order = rng.permutation(len(train_e))
        for start in range(0, len(order), batch):
            idx = order[start:start + batch]
            z = model.logits(X_tr[idx])
            dz = (_sigmoid(z) - T_tr[idx]) / len(idx)
            grads = {"probe.W": dz.T @ X_tr[idx],
                     "probe.b": np.array([dz.sum()]) if n_bias == 1 else dz.sum(axis=0)}
            opt.step(grads)
        dev_loss = _bce(model.logits(X_dev), T_dev)
        history["train_loss"].append(_bce(model.logits(X_tr), T_tr))
        history["dev_loss"].append(dev_loss)
        if dev_loss < best_dev:
            best_dev = dev_loss
            best = {k: v.copy() for k, v in blocks.items()}
            history["best_epoch"] = epoch + 1
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    model.W[...] = best["probe.W"]
    model.b[...] = best["probe.b"]
    history["best_dev_loss"] = best_dev
    return model, history


@dataclass
class ProbeMetrics:
    strict_accuracy: float
    micro_f1: float
    macro_f1: float


def _f1(tp: float, fp: float, fn: float) -> float:
    if tp == 0 and fp == 0 and fn == 0:
        return 1.0  # vacuous: nothing gold and nothing predicted
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom else 0.0


def probe_eval(model: ProbeModel, table: EmbeddingTable,
               type_map: dict[str, frozenset[str]], entities: list[str],
               threshold: float = 0.5) -> ProbeMetrics:
    """Strict accuracy plus micro/macro F1 at the given decision threshold."""
    if not entities:
        raise ValueError("no entities to evaluate")
    X = np.stack([table.row(e) for e in entities]).astype(np.float64)
    T = label_matrix(entities, type_map, model.type_ids)
    P = model.predict(X, threshold)
    strict = float((P == T.astype(bool)).all(axis=1).mean())
    tp = float(np.logical_and(P, T == 1).sum())
    fp = float(np.logical_and(P, T == 0).sum())
    fn = float(np.logical_and(~P, T == 1).sum())
    micro = _f1(tp, fp, fn)
    per_type = []
    for j in range(len(model.type_ids)):
        tpj = float(np.logical_and(P[:, j], T[:, j] == 1).sum())
        fpj = float(np.logical_and(P[:, j], T[:, j] == 0).sum())
        fnj = float(np.logical_and(~P[:, j], T[:, j] == 1).sum())
        per_type.append(_f1(tpj, fpj, fnj))
    return ProbeMetrics(strict_accuracy=strict, micro_f1=micro,
                        macro_f1=float(np.mean(per_type)))
