"""Micro-F1 scoring, threshold-based error taxonomy, and run comparison.

The taxonomy approximates a manual analysis with documented rules and emits
per-error evidence rows so a human can audit each assignment: candidate
misses first, then low-gold-prior errors, then errors introduced after the
global stage, then errors where the local score itself preferred the wrong
candidate.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import DataError, Document, Mention
from .scoring import DocumentForward

CATEGORIES = ("candidate_miss", "due_to_prior", "due_to_global",
              "due_to_local_context", "other")


@dataclass(frozen=True)
class Prediction:
    mention_id: str
    predicted: str
    candidates: tuple[str, ...]
    gold: str | None
    breakdown: dict[str, tuple[float, ...] | None]

    def __post_init__(self):
        if self.predicted not in self.candidates:
            raise ValueError(
                f"predicted entity {self.predicted!r} not in candidates of {self.mention_id!r}")


BREAKDOWN_KEYS = ("long_ctx", "sim", "log_prior", "jaccard", "local",
                  "max_marginal", "final")


def predictions_from_forward(fwd: DocumentForward) -> list[Prediction]:
    """Turn one scored document into run-file rows."""
    rows = []
    for idx, mention in enumerate(fwd.doc.mentions):
        ms = fwd.mention_scores[idx]
        breakdown: dict[str, tuple[float, ...] | None] = {
            "long_ctx": tuple(float(x) for x in ms.long_ctx),
            "sim": None if ms.sim is None else tuple(float(x) for x in ms.sim),
            "log_prior": tuple(float(x) for x in ms.log_prior),
            "jaccard": None if ms.jaccard is None else tuple(float(x) for x in ms.jaccard),
            "local": tuple(float(x) for x in ms.combined),
            "max_marginal": None if fwd.g_hat is None
            else tuple(float(x) for x in fwd.g_hat[idx]),
            "final": None if fwd.g_hat is None
            else tuple(float(x) for x in fwd.scores[idx]),
        }
        pred_idx = int(np.argmax(fwd.scores[idx]))
        rows.append(Prediction(
            mention_id=mention.id,
            predicted=mention.candidates[pred_idx].entity,
            candidates=tuple(c.entity for c in mention.candidates),
            gold=mention.gold,
            breakdown=breakdown,
        ))
    return rows


def write_run(predictions: Sequence[Prediction], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in predictions:
            obj = {
                "mention": p.mention_id,
                "predicted": p.predicted,
                "candidates": list(p.candidates),
                "gold": p.gold,
                "breakdown": {k: None if v is None else list(v)
                              for k, v in p.breakdown.items()},
            }
            fh.write(json.dumps(obj, sort_keys=True) + "\n")


def read_run(path: str | Path) -> list[Prediction]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: malformed JSON: {exc}") from exc
            breakdown = {k: None if v is None else tuple(float(x) for x in v)
                         for k, v in obj.get("breakdown", {}).items()}
            rows.append(Prediction(
                mention_id=obj["mention"],
                predicted=obj["predicted"],
                candidates=tuple(obj["candidates"]),
                gold=obj.get("gold"),
                breakdown=breakdown,
            ))
    return rows


def _in_kb_mentions(dataset: Sequence[Document]) -> dict[str, Mention]:
    out = {}
    for doc in dataset:
        for mention in doc.mentions:
            if mention.gold is not None:
                out[mention.id] = mention
    return out


def micro_f1(predictions: Sequence[Prediction], dataset: Sequence[Document]) -> float:
    """Correct predictions over in-KB mentions; candidate misses count as wrong."""
    mentions = _in_kb_mentions(dataset)
    by_id = {}
    for p in predictions:
        if p.mention_id not in mentions:
            raise ValueError(f"prediction for unknown mention id {p.mention_id!r}")
        if p.mention_id in by_id:
            raise ValueError(f"duplicate prediction for mention {p.mention_id!r}")
        by_id[p.mention_id] = p
    missing = set(mentions) - set(by_id)
    if missing:
        raise ValueError(f"missing predictions for mentions: {sorted(missing)[:5]}")
    if not mentions:
        raise ValueError("dataset has no in-KB mentions")
    correct = sum(1 for mid, m in mentions.items() if by_id[mid].predicted == m.gold)
    return correct / len(mentions)


@dataclass(frozen=True)
class ErrorThresholds:
    low_prior: float = 0.01       # gold prior below this can blame the prior
    dominant_prior: float = 0.1   # predicted prior at or above this counts as dominant


@dataclass
class ErrorDetail:
    mention_id: str
    gold: str
    predicted: str
    category: str
    gold_prior: float | None
    predicted_prior: float | None
    is_type_error: bool | None
    baseline_also_wrong: bool | None


@dataclass
class ErrorReport:
    counts: dict[str, int]
    total_errors: int
    type_errors: int | None
    rows: list[ErrorDetail] = field(default_factory=list)


def _prior_of(mention: Mention, entity: str) -> float | None:
    for c in mention.candidates:
        if c.entity == entity:
            return c.prior
    return None


def _score_of(pred: Prediction, key: str, entity: str) -> float | None:
    values = pred.breakdown.get(key)
    if values is None:
        return None
    return values[pred.candidates.index(entity)]


def categorize_errors(predictions_baseline: Sequence[Prediction] | None,
                      predictions_model: Sequence[Prediction],
                      dataset: Sequence[Document],
                      thresholds: ErrorThresholds = ErrorThresholds(),
                      type_map: dict[str, frozenset[str]] | None = None) -> ErrorReport:
    """Assign each model error to one taxonomy bucket.

    Rules, in order: the gold entity missing from the candidate list; a gold
    prior below ``low_prior`` while the predicted prior is dominant; the gold
    winning the local score but losing the final (global) score; the local
    score itself preferring the predicted entity; anything else lands in
    "other". Type-error flags need the optional type map.
    """
    mentions = _in_kb_mentions(dataset)
    base_by_id = {p.mention_id: p for p in predictions_baseline or []}
    counts = {c: 0 for c in CATEGORIES}
    rows = []
    type_error_count = 0 if type_map is not None else None
    for pred in predictions_model:
        mention = mentions.get(pred.mention_id)
        if mention is None:
            raise ValueError(f"prediction for unknown mention id {pred.mention_id!r}")
        if pred.predicted == mention.gold:
            continue
        gold_prior = _prior_of(mention, mention.gold)
        pred_prior = _prior_of(mention, pred.predicted)
        gold_in_cands = mention.gold in pred.candidates
        if not gold_in_cands:
            category = "candidate_miss"
        else:
            gold_local = _score_of(pred, "local", mention.gold)
            pred_local = _score_of(pred, "local", pred.predicted)
            has_global = pred.breakdown.get("final") is not None
            if gold_local is None or pred_local is None:
                raise DataError(f"missing local score breakdown for {pred.mention_id!r}")
            if (gold_prior is not None and gold_prior < thresholds.low_prior
                    and pred_prior is not None and pred_prior >= thresholds.dominant_prior):
                category = "due_to_prior"
            elif has_global and gold_local > pred_local:
                category = "due_to_global"
            elif pred_local >= gold_local:
                category = "due_to_local_context"
            else:
                category = "other"
        counts[category] += 1
        is_type_error = None
        if type_map is not None and gold_in_cands:
            gold_types = type_map.get(mention.gold, frozenset())
            pred_types = type_map.get(pred.predicted, frozenset())
            is_type_error = gold_types != pred_types
            if is_type_error:
                type_error_count += 1
        base = base_by_id.get(pred.mention_id)
        rows.append(ErrorDetail(
            mention_id=pred.mention_id, gold=mention.gold, predicted=pred.predicted,
            category=category, gold_prior=gold_prior, predicted_prior=pred_prior,
            is_type_error=is_type_error,
            baseline_also_wrong=None if base is None else base.predicted != mention.gold,
        ))
    return ErrorReport(counts=counts, total_errors=sum(counts.values()),
                       type_errors=type_error_count, rows=rows)


def render_error_table(report: ErrorReport) -> str:
    """Plain-text table of error categories with counts and percentages."""
    names = {
        "due_to_prior": "Due to prior",
        "due_to_global": "Due to global",
        "due_to_local_context": "Due to local context",
        "candidate_miss": "Candidate miss",
        "other": "Other",
    }
    lines = [f"{'Error Type':<24}{'# Cases':>8}  {'Percentage (%)':>14}"]
    total = report.total_errors
    for cat in ("due_to_prior", "due_to_global", "due_to_local_context",
                "candidate_miss", "other"):
        n = report.counts[cat]
        pct = 100.0 * n / total if total else 0.0
        lines.append(f"{names[cat]:<24}{n:>8}  {pct:>14.2f}")
    lines.append(f"{'Total':<24}{total:>8}  {100.0 if total else 0.0:>14.2f}")
    return "\n".join(lines)


@dataclass
class CompareReport:
    fixed: list[str]         # mention ids wrong in run_a, right in run_b
    regressed: list[str]     # mention ids right in run_a, wrong in run_b
    f1_a: float
    f1_b: float

    @property
    def net_f1_delta(self) -> float:
        return self.f1_b - self.f1_a


def compare_runs(run_a: Sequence[Prediction], run_b: Sequence[Prediction],
                 dataset: Sequence[Document]) -> CompareReport:
    """Errors of run_a fixed by run_b, errors introduced, and the F1 delta."""
    ids_a = {p.mention_id for p in run_a}
    ids_b = {p.mention_id for p in run_b}
    if ids_a != ids_b:
        raise ValueError("runs cover different mention sets")
    mentions = _in_kb_mentions(dataset)
    a_by_id = {p.mention_id: p for p in run_a}
    fixed, regressed = [], []
    for p_b in run_b:
        mention = mentions.get(p_b.mention_id)
        if mention is None:
            raise ValueError(f"prediction for unknown mention id {p_b.mention_id!r}")
        a_right = a_by_id[p_b.mention_id].predicted == mention.gold
        b_right = p_b.predicted == mention.gold
        if not a_right and b_right:
            fixed.append(p_b.mention_id)
        elif a_right and not b_right:
            regressed.append(p_b.mention_id)
    return CompareReport(fixed=sorted(fixed), regressed=sorted(regressed),
                         f1_a=micro_f1(run_a, dataset), f1_b=micro_f1(run_b, dataset))
