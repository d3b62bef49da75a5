"""Pooled entity embeddings built from masked-context vectors.

An entity's vector is the elementwise mean of up to ``cap`` context vectors,
sampled per entity by a deterministic seed-keyed shuffle. Similarity is plain
cosine; nearest-neighbour queries are exact exhaustive scans.
"""
from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .data import DataError, EmbeddingTable, load_embeddings

CONTEXT_CAP = 100  # at most this many contexts are pooled per entity


@dataclass(frozen=True)
class ContextVector:
    entity: str
    source: str
    vec: np.ndarray


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity; zero-norm inputs score 0 with a warning."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"dim mismatch: {a.shape} vs {b.shape}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        warnings.warn("zero-norm vector in cosine, scoring 0", RuntimeWarning, stacklevel=2)
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def aggregate_entity(vectors: Sequence[ContextVector]) -> np.ndarray:
    """Elementwise mean of one entity's context vectors."""
    if not vectors:
        raise ValueError("cannot aggregate an empty context list")
    dim = len(vectors[0].vec)
    for v in vectors:
        if len(v.vec) != dim:
            raise ValueError(f"dim mismatch in context vectors: {len(v.vec)} vs {dim}")
    stack = np.stack([np.asarray(v.vec, dtype=np.float64) for v in vectors])
    return stack.sum(axis=0) / len(vectors)


def _entity_rng(seed: int, entity: str) -> np.random.Generator:
    # hashlib keeps the per-entity shuffle stable across processes (hash() is salted)
    digest = hashlib.blake2b(f"{seed}:{entity}".encode("utf-8"), digest_size=8).digest()
    return np.random.Generator(np.random.PCG64(int.from_bytes(digest, "little")))


def sample_contexts(vectors: Sequence[ContextVector], cap: int, seed: int) -> list[ContextVector]:
    """Deterministic per-entity sample: shuffle keyed by (seed, entity id), take first cap."""
    if len(vectors) <= cap:
        return list(vectors)
    order = _entity_rng(seed, vectors[0].entity).permutation(len(vectors))
    return [vectors[i] for i in order[:cap]]


def build_entity_table(
    stream: Iterable[ContextVector],
    cap: int = CONTEXT_CAP,
    seed: int = 0,
    exclude_sources: set[str] | None = None,
) -> EmbeddingTable:
    """Pool context vectors into one row per entity (first-seen entity order).

    ``exclude_sources`` drops contexts by source id before sampling, e.g. to
    hold out articles that appear in an evaluation set.
    """
    if cap < 1:
        raise ValueError("cap must be >= 1")
    groups: dict[str, list[ContextVector]] = {}
    dim = None
    for cv in stream:
        if exclude_sources and cv.source in exclude_sources:
            continue
        if dim is None:
            dim = len(cv.vec)
        elif len(cv.vec) != dim:
            raise ValueError(f"dim mismatch in context stream: {len(cv.vec)} vs {dim}")
        groups.setdefault(cv.entity, []).append(cv)
    if not groups:
        raise ValueError("no context vectors to aggregate")
    ids = list(groups.keys())
    matrix = np.empty((len(ids), dim), dtype=np.float32)
    for i, entity in enumerate(ids):
        picked = sample_contexts(groups[entity], cap, seed)
        matrix[i] = aggregate_entity(picked).astype(np.float32)
    return EmbeddingTable(ids, matrix)


def nearest_entities(query: str, table: EmbeddingTable, k: int) -> list[tuple[str, float]]:
    """Top-k entities by cosine to the query's row, query excluded, ties by id."""
    qvec = table.row(query).astype(np.float64)
    scored = []
    for id_ in table.ids:
        if id_ == query:
            continue
        scored.append((id_, cosine(qvec, table.row(id_))))
    scored.sort(key=lambda item: (-item[1], item[0]))
    return scored[:k]


def nearest_contexts(
    query_vec: np.ndarray, store: Sequence[ContextVector], k: int
) -> list[tuple[str, float]]:
    """Top-k stored contexts by cosine to the query vector, ties by source id."""
    scored = [(cv.source, cosine(query_vec, cv.vec)) for cv in store]
    scored.sort(key=lambda item: (-item[1], item[0]))
    return scored[:k]


# ---------------------------------------------------------------------------
# interchange formats


def read_context_vectors(path: str | Path) -> list[ContextVector]:
    """Read the NDJSON interchange format: {"entity", "source", "vec"} per line."""
    out = []
    dim = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: malformed JSON: {exc}") from exc
            entity = obj.get("entity")
            source = obj.get("source")
            vec = obj.get("vec")
            if not isinstance(entity, str) or not isinstance(source, str) or not isinstance(vec, list):
                raise DataError(f"{path}:{lineno}: expected entity/source strings and a vec list")
            arr = np.asarray(vec, dtype=np.float64)
            if not np.all(np.isfinite(arr)):
                raise DataError(f"{path}:{lineno}: non-finite vector")
            if dim is None:
                dim = arr.shape[0]
            elif arr.shape[0] != dim:
                raise DataError(f"{path}:{lineno}: dim {arr.shape[0]} != {dim}")
            out.append(ContextVector(entity=entity, source=source, vec=arr))
    return out


def write_context_vectors(vectors: Iterable[ContextVector], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for cv in vectors:
            obj = {"entity": cv.entity, "source": cv.source, "vec": [float(x) for x in cv.vec]}
            fh.write(json.dumps(obj, sort_keys=True) + "\n")


def read_context_vectors_emb1(matrix_path: str | Path, ids_path: str | Path) -> list[ContextVector]:
    """EMB1 variant of the interchange: companion id lines are "entity<TAB>source"."""
    table = load_embeddings(matrix_path, ids_path)
    out = []
    for id_ in table.ids:
        entity, sep, source = id_.partition("\t")
        if not sep:
            raise DataError(f"{ids_path}: id line {id_!r} is not 'entity<TAB>source'")
        out.append(ContextVector(entity=entity, source=source, vec=table.row(id_).astype(np.float64)))
    return out


def read_mention_vectors(path: str | Path) -> dict[str, np.ndarray]:
    """Sidecar of mention context vectors: {"mention", "vec"} per NDJSON line."""
    out: dict[str, np.ndarray] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: malformed JSON: {exc}") from exc
            mid = obj.get("mention")
            vec = obj.get("vec")
            if not isinstance(mid, str) or not isinstance(vec, list):
                raise DataError(f"{path}:{lineno}: expected mention string and vec list")
            if mid in out:
                raise DataError(f"{path}:{lineno}: duplicate mention {mid!r}")
            out[mid] = np.asarray(vec, dtype=np.float64)
    return out


def write_mention_vectors(vecs: dict[str, np.ndarray], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for mid, vec in vecs.items():
            fh.write(json.dumps({"mention": mid, "vec": [float(x) for x in vec]}, sort_keys=True) + "\n")
