"""Data model and file formats shared by every stage of the pipeline.

Three on-disk formats live here:

* dataset JSON: documents with mentions, candidate lists and priors,
* EMB1 binaries: a dense float32 id -> vector matrix with a companion id file,
* type map NDJSON: one ``{"entity": ..., "types": [...]}`` object per line.

Everything loaded through this module is immutable after construction and can
be shared freely across workers.
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

EMB_MAGIC = b"EMB1"
MAX_MENTIONS_PER_DOC = 64  # one training step handles at most this many mentions
LONG_CTX_CAP = 100         # K-word long-range context window
PRIOR_FLOOR = 1e-12        # zero priors are floored before taking logs


class DataError(ValueError):
    """Malformed input file or violated data invariant."""


def log_prior(prior: float) -> float:
    """Log of a candidate prior with the zero floor applied."""
    return math.log(max(prior, PRIOR_FLOOR))


@dataclass(frozen=True)
class Candidate:
    entity: str
    prior: float


@dataclass(frozen=True)
class Mention:
    id: str
    surface: tuple[str, ...]
    left_ctx: tuple[str, ...]
    right_ctx: tuple[str, ...]
    long_ctx: tuple[str, ...]
    candidates: tuple[Candidate, ...]
    gold: str | None = None
    mention_types: frozenset[str] | None = None

    def gold_index(self) -> int | None:
        """Index of the gold entity in the candidate list, None on a recall miss."""
        if self.gold is None:
            return None
        for i, cand in enumerate(self.candidates):
            if cand.entity == self.gold:
                return i
        return None


@dataclass(frozen=True)
class Document:
    id: str
    mentions: tuple[Mention, ...]

    def __len__(self) -> int:
        return len(self.mentions)


def split_document(doc: Document, cap: int = MAX_MENTIONS_PER_DOC) -> list[Document]:
    """Split a document into consecutive chunks of at most ``cap`` mentions.

    Mention order and total count are preserved; chunk ids get a ``#k`` suffix.
    """
    if cap < 1:
        raise ValueError("cap must be >= 1")
    if len(doc.mentions) <= cap:
        return [doc]
    chunks = []
    for k, start in enumerate(range(0, len(doc.mentions), cap)):
        chunks.append(Document(id=f"{doc.id}#{k}", mentions=doc.mentions[start:start + cap]))
    return chunks


# ---------------------------------------------------------------------------
# dataset JSON


def _expect(obj, typ, where: str):
    if not isinstance(obj, typ):
        raise DataError(f"{where}: expected {typ.__name__}, got {type(obj).__name__}")
    return obj


def _str_list(obj, where: str) -> tuple[str, ...]:
    _expect(obj, list, where)
    out = []
    for i, tok in enumerate(obj):
        _expect(tok, str, f"{where}[{i}]")
        out.append(tok)
    return tuple(out)


def _parse_mention(obj, where: str, max_long_ctx: int) -> Mention:
    _expect(obj, dict, where)
    for key in ("id", "surface", "left_ctx", "right_ctx", "long_ctx", "candidates"):
        if key not in obj:
            raise DataError(f"{where}: missing field '{key}'")
    long_ctx = _str_list(obj["long_ctx"], f"{where}.long_ctx")
    if len(long_ctx) > max_long_ctx:
        raise DataError(f"{where}.long_ctx: length {len(long_ctx)} exceeds cap {max_long_ctx}")
    cand_objs = _expect(obj["candidates"], list, f"{where}.candidates")
    if not cand_objs:
        raise DataError(f"{where}.candidates: empty candidate list")
    candidates = []
    for i, c in enumerate(cand_objs):
        cwhere = f"{where}.candidates[{i}]"
        _expect(c, dict, cwhere)
        entity = _expect(c.get("entity"), str, f"{cwhere}.entity")
        prior = c.get("prior")
        if not isinstance(prior, (int, float)) or isinstance(prior, bool):
            raise DataError(f"{cwhere}.prior: expected number")
        prior = float(prior)
        if not (0.0 <= prior <= 1.0):
            raise DataError(f"{cwhere}.prior: prior out of range [0, 1]: {prior}")
        candidates.append(Candidate(entity=entity, prior=prior))
    gold = obj.get("gold")
    if gold is not None:
        _expect(gold, str, f"{where}.gold")
    mtypes = obj.get("mention_types")
    if mtypes is not None:
        mtypes = frozenset(_str_list(mtypes, f"{where}.mention_types"))
    return Mention(
        id=_expect(obj["id"], str, f"{where}.id"),
        surface=_str_list(obj["surface"], f"{where}.surface"),
        left_ctx=_str_list(obj["left_ctx"], f"{where}.left_ctx"),
        right_ctx=_str_list(obj["right_ctx"], f"{where}.right_ctx"),
        long_ctx=long_ctx,
        candidates=tuple(candidates),
        gold=gold,
        mention_types=mtypes,
    )


def load_dataset(path: str | Path, max_long_ctx: int = LONG_CTX_CAP) -> list[Document]:
    """Parse a dataset JSON file into Documents, or fail with a positioned error."""
    try:
        with open(path, encoding="utf-8") as fh:
            root = json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: malformed JSON: {exc}") from exc
    _expect(root, dict, "root")
    docs_obj = _expect(root.get("documents"), list, "documents")
    documents = []
    for d_idx, dobj in enumerate(docs_obj):
        dwhere = f"documents[{d_idx}]"
        _expect(dobj, dict, dwhere)
        doc_id = _expect(dobj.get("id"), str, f"{dwhere}.id")
        mentions_obj = _expect(dobj.get("mentions"), list, f"{dwhere}.mentions")
        if not mentions_obj:
            raise DataError(f"{dwhere}.mentions: document has no mentions")
        mentions = tuple(
            _parse_mention(mobj, f"{dwhere}.mentions[{m_idx}]", max_long_ctx)
            for m_idx, mobj in enumerate(mentions_obj)
        )
        documents.append(Document(id=doc_id, mentions=mentions))
    return documents


def _mention_to_json(m: Mention) -> dict:
    out = {
        "id": m.id,
        "surface": list(m.surface),
        "left_ctx": list(m.left_ctx),
        "right_ctx": list(m.right_ctx),
        "long_ctx": list(m.long_ctx),
        "candidates": [{"entity": c.entity, "prior": c.prior} for c in m.candidates],
        "gold": m.gold,
    }
    if m.mention_types is not None:
        out["mention_types"] = sorted(m.mention_types)
    return out


def save_dataset(documents: Sequence[Document], path: str | Path) -> None:
    """Inverse of load_dataset; round-trips every field."""
    root = {
        "documents": [
            {"id": d.id, "mentions": [_mention_to_json(m) for m in d.mentions]}
            for d in documents
        ]
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(root, fh, sort_keys=True)


# ---------------------------------------------------------------------------
# embedding tables


class EmbeddingTable:
    """Immutable id -> float32 row matrix. Lookups by unknown id raise KeyError."""

    def __init__(self, ids: Sequence[str], matrix: np.ndarray):
        matrix = np.ascontiguousarray(matrix, dtype=np.float32)
        if matrix.ndim != 2:
            raise DataError(f"embedding matrix must be 2-d, got shape {matrix.shape}")
        if len(ids) != matrix.shape[0]:
            raise DataError(f"id count {len(ids)} != row count {matrix.shape[0]}")
        if matrix.size and not np.all(np.isfinite(matrix)):
            bad = int(np.argwhere(~np.isfinite(matrix).all(axis=1))[0][0])
            raise DataError(f"non-finite values in embedding row {bad}")
        self.ids: tuple[str, ...] = tuple(ids)
        self._index = {id_: i for i, id_ in enumerate(self.ids)}
        if len(self._index) != len(self.ids):
            raise DataError("duplicate id in embedding table")
        matrix.setflags(write=False)
        self.matrix = matrix

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def __len__(self) -> int:
        return len(self.ids)

    def __contains__(self, id_: str) -> bool:
        return id_ in self._index

    def index(self, id_: str) -> int:
        try:
            return self._index[id_]
        except KeyError:
            raise KeyError(f"unknown embedding id: {id_!r}") from None

    def row(self, id_: str) -> np.ndarray:
        return self.matrix[self.index(id_)]


def write_embeddings(table: EmbeddingTable, matrix_path: str | Path, ids_path: str | Path) -> None:
    """Write the EMB1 binary (magic, u32 count, u32 dim, float32 LE rows) plus id file."""
    with open(matrix_path, "wb") as fh:
        fh.write(EMB_MAGIC)
        fh.write(struct.pack("<II", len(table), table.dim))
        fh.write(np.ascontiguousarray(table.matrix, dtype="<f4").tobytes())
    with open(ids_path, "w", encoding="utf-8") as fh:
        for id_ in table.ids:
            fh.write(id_ + "\n")


def load_embeddings(matrix_path: str | Path, ids_path: str | Path) -> EmbeddingTable:
    """Load an EMB1 binary and its companion id file back into a table."""
    with open(matrix_path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 12 or blob[:4] != EMB_MAGIC:
        raise DataError(f"{matrix_path}: bad magic, not an EMB1 file")
    count, dim = struct.unpack("<II", blob[4:12])
    expected = 12 + count * dim * 4
    if len(blob) != expected:
        raise DataError(f"{matrix_path}: payload size {len(blob)} != expected {expected}")
    matrix = np.frombuffer(blob[12:], dtype="<f4").reshape(count, dim)
    with open(ids_path, encoding="utf-8") as fh:
        ids = fh.read().splitlines()
    if len(ids) != count:
        raise DataError(f"{ids_path}: {len(ids)} ids but header says {count} rows")
    return EmbeddingTable(ids, matrix)


# ---------------------------------------------------------------------------
# type maps


def load_type_map(path: str | Path) -> dict[str, frozenset[str]]:
    """Load an NDJSON type map; one entity per line, duplicates rejected."""
    out: dict[str, frozenset[str]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: malformed JSON: {exc}") from exc
            where = f"{path}:{lineno}"
            _expect(obj, dict, where)
            entity = _expect(obj.get("entity"), str, f"{where}.entity")
            types = frozenset(_str_list(obj.get("types"), f"{where}.types"))
            if entity in out:
                raise DataError(f"{where}: duplicate entity {entity!r}")
            out[entity] = types
    return out


def write_type_map(type_map: dict[str, frozenset[str]], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for entity, types in type_map.items():
            fh.write(json.dumps({"entity": entity, "types": sorted(types)}, sort_keys=True) + "\n")
