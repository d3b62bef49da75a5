"""Shared fixtures: checked-in corpora plus deterministic random builders."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pytest

from typelink.data import (Candidate, Document, EmbeddingTable, Mention,
                           load_dataset, load_embeddings, load_type_map)
from typelink.embeddings import build_entity_table, read_context_vectors, read_mention_vectors
from typelink.local import Resources
from typelink.params import ModelParams
from typelink.scoring import forward_document
from typelink.train import TrainConfig

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def fixtures_dir() -> Path:
    return FIXTURES


@dataclass
class Corpus:
    res: Resources
    train_docs: list[Document]
    eval_docs: list[Document]
    type_map: dict[str, frozenset[str]] | None = None


def _tables(root: Path) -> tuple[EmbeddingTable, EmbeddingTable]:
    word = load_embeddings(root / "word.emb", root / "word.ids")
    entity = load_embeddings(root / "entity.emb", root / "entity.ids")
    return word, entity


@pytest.fixture(scope="session")
def small_corpus() -> Corpus:
    root = FIXTURES / "small"
    word, entity = _tables(root)
    sim = build_entity_table(read_context_vectors(root / "ctxvecs.ndjson"), cap=100, seed=0)
    docs = load_dataset(root / "dataset.json")
    return Corpus(
        res=Resources(word_table=word, entity_table=entity, sim_table=sim,
                      mention_vecs=read_mention_vectors(root / "mention_vecs.ndjson"),
                      entity_types=load_type_map(root / "type_map.ndjson")),
        train_docs=docs, eval_docs=docs,
        type_map=load_type_map(root / "type_map.ndjson"))


@pytest.fixture(scope="session")
def e2e_corpus() -> Corpus:
    root = FIXTURES / "e2e"
    word, entity = _tables(root)
    sim = build_entity_table(read_context_vectors(root / "ctxvecs.ndjson"), cap=100, seed=0)
    return Corpus(
        res=Resources(word_table=word, entity_table=entity, sim_table=sim,
                      mention_vecs=read_mention_vectors(root / "mention_vecs.ndjson")),
        train_docs=load_dataset(root / "train.json"),
        eval_docs=load_dataset(root / "eval.json"))


@pytest.fixture(scope="session")
def typed_corpus() -> Corpus:
    root = FIXTURES / "typed"
    word, entity = _tables(root)
    tmap = load_type_map(root / "type_map.ndjson")
    return Corpus(
        res=Resources(word_table=word, entity_table=entity, entity_types=tmap),
        train_docs=load_dataset(root / "train.json"),
        eval_docs=load_dataset(root / "eval.json"),
        type_map=tmap)


# ---------------------------------------------------------------------------
# random builders for gradient and inference tests


def random_tables(rng: np.random.Generator, n_words: int = 10, n_ents: int = 6,
                  dim: int = 4, sim_dim: int = 6):
    words = [f"w{i}" for i in range(n_words)]
    ents = [f"e{i}" for i in range(n_ents)]
    word_t = EmbeddingTable(words, rng.normal(size=(n_words, dim)).astype(np.float32))
    ent_t = EmbeddingTable(ents, rng.normal(size=(n_ents, dim)).astype(np.float32))
    sim_t = EmbeddingTable(ents, rng.normal(size=(n_ents, sim_dim)).astype(np.float32))
    return word_t, ent_t, sim_t


def random_mention(rng: np.random.Generator, mid: str, word_ids, ent_ids,
                   n_cands: int, ctx_len: int = 5) -> Mention:
    cands = list(rng.choice(ent_ids, size=n_cands, replace=False))
    gold = cands[int(rng.integers(0, n_cands))]
    return Mention(
        id=mid, surface=("x",), left_ctx=(), right_ctx=(),
        long_ctx=tuple(str(w) for w in rng.choice(word_ids, size=ctx_len)),
        candidates=tuple(Candidate(str(e), float(rng.uniform(0.05, 0.9))) for e in cands),
        gold=str(gold))


def random_lbp_instance(rng: np.random.Generator, n: int, lmax: int, dmax: int):
    ls = rng.integers(1, lmax + 1, size=n)
    d = int(rng.integers(2, dmax + 1))
    unary = [rng.normal(size=l) for l in ls]
    vecs = [rng.normal(0.0, 1.0 / np.sqrt(d), size=(l, d)) for l in ls]
    diag = rng.normal(size=d)
    return unary, vecs, diag


def _well_conditioned(docs, res, params, config, margin: float = 1e-3) -> bool:
    """Reject fixtures whose loss sits within a finite-difference step of a kink
    (ReLU boundaries, hinge boundaries, near-tied maxima)."""
    for doc in docs:
        fwd = forward_document(doc, res, params, config.lbp,
                               want_trace=config.grad_mode == "unroll")
        for cache in fwd.caches:
            if np.abs(cache.mlp["z"]).min() < margin:
                return False
            if cache.final is not None and np.abs(cache.final["mlp"]["z"]).min() < margin:
                return False
        for idx, mention in enumerate(doc.mentions):
            gold_idx = mention.gold_index()
            if gold_idx is None:
                continue
            s = fwd.scores[idx]
            hinges = config.gamma - s[gold_idx] + np.delete(s, gold_idx)
            if len(hinges) and np.abs(hinges).min() < margin:
                return False
            if fwd.g_hat is not None and len(fwd.g_hat[idx]) > 1:
                top2 = np.sort(fwd.g_hat[idx])[-2:]
                if top2[1] - top2[0] < margin:
                    return False
        # attention maxima: per-word best-candidate gap and the kept/dropped boundary
        for mention in doc.mentions:
            in_vocab = [w for w in mention.long_ctx if w in res.word_table]
            if not in_vocab:
                continue
            wv = np.stack([res.word_table.row(w) for w in in_vocab]).astype(np.float64)
            cv = np.stack([res.entity_table.row(c.entity)
                           for c in mention.candidates]).astype(np.float64)
            m = (cv * params.attn_diag) @ wv.T
            if m.shape[0] > 1:
                top2 = np.sort(m, axis=0)[-2:, :]
                if (top2[1] - top2[0]).min() < margin:
                    return False
            u = np.sort(m.max(axis=0))[::-1]
            if len(u) > res.top_words and u[res.top_words - 1] - u[res.top_words] < margin:
                return False
    return True


def grad_fixture(seed: int, mode: str, grad_mode: str = "stop", hidden: int = 8,
                 max_attempts: int = 50):
    """Deterministic well-conditioned fixture for gradient checks.

    Small by construction: at most 3 mentions, at most 4 candidates, dim <= 8.
    """
    config = TrainConfig(mode=mode, grad_mode=grad_mode, hidden=hidden)
    for attempt in range(max_attempts):
        rng = np.random.default_rng(seed * 1000 + attempt)
        dim = int(rng.integers(3, 9))
        word_t, ent_t, sim_t = random_tables(rng, n_words=10, n_ents=6, dim=dim)
        mentions = tuple(
            random_mention(rng, f"m{k}", word_t.ids, ent_t.ids,
                           n_cands=int(rng.integers(2, 5)))
            for k in range(int(rng.integers(2, 4))))
        doc = Document(id="gdoc", mentions=mentions)
        res = Resources(
            word_table=word_t, entity_table=ent_t, sim_table=sim_t,
            mention_vecs={m.id: rng.normal(size=sim_t.dim) for m in mentions},
            entity_types={e: frozenset({f"t{i % 2}"}) for i, e in enumerate(ent_t.ids)},
            top_words=3)
        if mode == "typed_predict":
            mentions = tuple(
                Mention(id=m.id, surface=m.surface, left_ctx=m.left_ctx,
                        right_ctx=m.right_ctx, long_ctx=m.long_ctx,
                        candidates=m.candidates, gold=m.gold,
                        mention_types=frozenset({"t0"}))
                for m in mentions)
            doc = Document(id="gdoc", mentions=mentions)
        params = ModelParams.create(dim, mode, seed=seed, hidden=hidden)
        for arr in params.blocks().values():
            arr[...] = rng.normal(0.0, 0.5, size=arr.shape)
        if _well_conditioned([doc], res, params, config):
            return [doc], res, params, config
    raise RuntimeError(f"no well-conditioned fixture found for seed {seed}")
