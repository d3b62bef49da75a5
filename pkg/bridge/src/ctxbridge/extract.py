"""Masked-context vector extraction.

Each corpus record holds the text to the left and right of a mention. The
mention is replaced by the tokenizer's mask token, the sequence is truncated
to the length budget while always keeping the mask (token budget balanced
across the two sides, spilling unused budget to the longer side), and the
final-layer hidden state at the mask position becomes the record's vector.

Output is NDJSON: ``{"entity", "source", "vec"}`` rows ready for pooling, or
``{"mention", "vec"}`` sidecar rows with ``emit="mentions"``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch


class BridgeError(ValueError):
    pass


@dataclass(frozen=True)
class Record:
    id: str
    entity: str | None
    left: str
    right: str


def read_records(path: str | Path) -> list[Record]:
    """Parse the corpus NDJSON; every record needs at least one context side."""
    records = []
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise BridgeError(f"{path}:{lineno}: malformed JSON: {exc}") from exc
            rid = obj.get("id")
            left = obj.get("left", "")
            right = obj.get("right", "")
            entity = obj.get("entity")
            if not isinstance(rid, str) or not rid:
                raise BridgeError(f"{path}:{lineno}: missing record id")
            if rid in seen:
                raise BridgeError(f"{path}:{lineno}: duplicate record id {rid!r}")
            seen.add(rid)
            if not isinstance(left, str) or not isinstance(right, str):
                raise BridgeError(f"{path}:{lineno}: left/right must be strings")
            if not left.strip() and not right.strip():
                raise BridgeError(f"{path}:{lineno}: both context sides empty")
            if entity is not None and not isinstance(entity, str):
                raise BridgeError(f"{path}:{lineno}: entity must be a string or null")
            records.append(Record(id=rid, entity=entity, left=left, right=right))
    return records


def fit_window(left_ids: list[int], right_ids: list[int],
               budget: int) -> tuple[list[int], list[int]]:
    """Trim context token ids to the budget, keeping tokens nearest the mask.

    Each side gets half the budget; a side that needs less donates the rest.
    """
    if budget < 0:
        raise ValueError("budget must be non-negative")
    if len(left_ids) + len(right_ids) <= budget:
        return left_ids, right_ids
    half = budget // 2
    if len(left_ids) <= half:
        l_take = len(left_ids)
        r_take = budget - l_take
    elif len(right_ids) <= budget - half:
        r_take = len(right_ids)
        l_take = budget - r_take
    else:
        l_take = half
        r_take = budget - half
    return (left_ids[len(left_ids) - l_take:] if l_take else [],
            right_ids[:r_take])


@dataclass
class ExtractionJob:
    corpus: str | Path
    model: str = "bert-base-cased"   # model identifier or local checkpoint dir
    max_length: int = 128            # subword cap including [CLS]/[SEP]/mask
    batch_size: int = 16
    device: str = "cpu"
    emit: str = "contexts"           # "contexts" or "mentions"

    def __post_init__(self):
        if self.max_length < 3:
            raise BridgeError("max_length must leave room for [CLS], mask, [SEP]")
        if self.batch_size < 1:
            raise BridgeError("batch_size must be positive")
        if self.emit not in ("contexts", "mentions"):
            raise BridgeError(f"unknown emit mode {self.emit!r}")


@dataclass
class ExtractionStats:
    records: int = 0
    emitted: int = 0
    skipped_no_entity: int = 0
    skipped_mask_lost: int = 0
    truncated: int = 0
    dim: int = 0
    max_seq_len: int = 0

    def as_dict(self) -> dict:
        return dict(vars(self))


class MaskedContextEncoder:
    """Wraps a masked LM checkpoint and turns (left, right) pairs into vectors."""

    def __init__(self, model: str, device: str = "cpu"):
        from transformers import AutoModel, AutoTokenizer
        try:
            self.tokenizer = AutoTokenizer.from_pretrained(model)
            self.model = AutoModel.from_pretrained(model)
        except Exception as exc:
            raise BridgeError(f"cannot load model {model!r}: {exc}") from exc
        if self.tokenizer.mask_token_id is None:
            raise BridgeError(f"model {model!r} has no mask token")
        self.device = torch.device(device)
        self.model.to(self.device)
        self.model.eval()
        self.dim = int(self.model.config.hidden_size)

    def _ids(self, text: str) -> list[int]:
        if not text.strip():
            return []
        return self.tokenizer(text, add_special_tokens=False)["input_ids"]

    def build_sequence(self, record: Record, max_length: int) -> tuple[list[int], int, bool]:
        """Token ids with the mask substituted, plus its position and a trunc flag."""
        tok = self.tokenizer
        left = self._ids(record.left)
        right = self._ids(record.right)
        budget = max_length - 3
        kept_left, kept_right = fit_window(left, right, budget)
        truncated = len(kept_left) + len(kept_right) < len(left) + len(right)
        ids = ([tok.cls_token_id] + kept_left + [tok.mask_token_id]
               + kept_right + [tok.sep_token_id])
        return ids, 1 + len(kept_left), truncated

    @torch.no_grad()
    def encode_batch(self, sequences: list[list[int]],
                     mask_positions: list[int]) -> np.ndarray:
        pad = self.tokenizer.pad_token_id or 0
        width = max(len(s) for s in sequences)
        ids = torch.full((len(sequences), width), pad, dtype=torch.long)
        attn = torch.zeros((len(sequences), width), dtype=torch.long)
        for i, seq in enumerate(sequences):
            ids[i, : len(seq)] = torch.tensor(seq, dtype=torch.long)
            attn[i, : len(seq)] = 1
        out = self.model(input_ids=ids.to(self.device),
                         attention_mask=attn.to(self.device))
        hidden = out.last_hidden_state
        rows = hidden[torch.arange(len(sequences)), torch.tensor(mask_positions)]
        return rows.cpu().numpy().astype(np.float64)


def extract_context_vectors(job: ExtractionJob, out_path: str | Path,
                            encoder: MaskedContextEncoder | None = None) -> ExtractionStats:
    """Run the extraction job and write NDJSON vectors to ``out_path``."""
    records = read_records(job.corpus)
    if encoder is None:
        encoder = MaskedContextEncoder(job.model, job.device)
    stats = ExtractionStats(records=len(records), dim=encoder.dim)

    batch_records: list[Record] = []
    batch_seqs: list[list[int]] = []
    batch_positions: list[int] = []

    def flush(fh):
        if not batch_records:
            return
        vecs = encoder.encode_batch(batch_seqs, batch_positions)
        for rec, vec in zip(batch_records, vecs):
            if not np.all(np.isfinite(vec)):
                raise BridgeError(f"non-finite vector for record {rec.id!r}")
            if job.emit == "contexts":
                obj = {"entity": rec.entity, "source": rec.id,
                       "vec": [float(x) for x in vec]}
            else:
                obj = {"mention": rec.id, "vec": [float(x) for x in vec]}
            fh.write(json.dumps(obj, sort_keys=True) + "\n")
            stats.emitted += 1
        batch_records.clear()
        batch_seqs.clear()
        batch_positions.clear()

    with open(out_path, "w", encoding="utf-8") as fh:
        for rec in records:
            if job.emit == "contexts" and rec.entity is None:
                stats.skipped_no_entity += 1
                continue
            ids, mask_pos, truncated = encoder.build_sequence(rec, job.max_length)
            if mask_pos >= len(ids) or ids[mask_pos] != encoder.tokenizer.mask_token_id:
                stats.skipped_mask_lost += 1
                continue
            stats.truncated += int(truncated)
            stats.max_seq_len = max(stats.max_seq_len, len(ids))
            batch_records.append(rec)
            batch_seqs.append(ids)
            batch_positions.append(mask_pos)
            if len(batch_records) >= job.batch_size:
                flush(fh)
        flush(fh)
    return stats
