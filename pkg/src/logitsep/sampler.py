"""Demonstration sample organization over the refined pool.

Samples are scored by how cleanly their zero-shot logits rank the words of
their own class at the top of the refined pool, then interleaved across
classes so each class's best sample appears before any second-best one.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import ClassWordPool
from .errors import DataError
from .refiner import LogitMatrix

TOP_LOGIT_SUM = "top_logit_sum"
RANK_WEIGHTED = "rank_weighted"
SCORING_METHODS = (TOP_LOGIT_SUM, RANK_WEIGHTED)


@dataclass(frozen=True)
class SampleScore:
    sample_id: int
    label: str
    method: str
    value: float | None
    eligible: bool


@dataclass(frozen=True)
class PlanEntry:
    sample_id: int
    label: str
    score: float


@dataclass
class DemonstrationPlan:
    entries: list[PlanEntry]
    k: int
    balanced: bool

    def sample_ids(self) -> list[int]:
        return [e.sample_id for e in self.entries]

    def to_json_obj(self) -> dict:
        return {
            "order": [
                {"sample_id": e.sample_id, "class": e.label, "score": e.score}
                for e in self.entries
            ],
            "k": self.k,
            "balanced": self.balanced,
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(
            json.dumps(self.to_json_obj(), indent=2, ensure_ascii=False) + "\n",
            encoding="utf-8",
        )

    @classmethod
    def from_json_obj(cls, obj: dict) -> "DemonstrationPlan":
        entries = [
            PlanEntry(sample_id=row["sample_id"], label=row["class"], score=row["score"])
            for row in obj["order"]
        ]
        return cls(entries=entries, k=obj["k"], balanced=obj["balanced"])


def ranked_word_indices(logits_row: np.ndarray) -> np.ndarray:
    """Column indices sorted by logit descending, ties kept in pool order."""
    return np.argsort(-np.asarray(logits_row, dtype=float), kind="stable")


def misprediction_filter(matrix: LogitMatrix, pool: ClassWordPool) -> dict[int, bool]:
    """A sample stays eligible iff the pool-wide argmax word belongs to its own class.

    Exact argmax ties go to the word listed first in pool order.
    """
    del pool  # column order already encodes pool order
    eligibility: dict[int, bool] = {}
    for row, sample_id, label in zip(matrix.values, matrix.sample_ids, matrix.sample_labels):
        top = int(np.argmax(row))  # first maximum wins
        eligibility[sample_id] = matrix.word_classes[top] == label
    return eligibility


def rank_weight(n: int, i: int) -> float:
    """Linear weight of 0-based rank i among the top n; the n weights sum to 1."""
    return 2.0 * (n - i) / ((n + 1) * n)


def _top_ranks(logits_row: np.ndarray, word_classes: Sequence[str], true_class: str, n: int):
    order = ranked_word_indices(logits_row)
    for rank, col in enumerate(order[:n]):
        if word_classes[col] == true_class:
            yield rank, float(logits_row[col])


def score_top_logit_sum(
    logits_row: np.ndarray, word_classes: Sequence[str], true_class: str, class_size: int
) -> float:
    """Sum of own-class logits that land in the top ``class_size`` ranks."""
    if class_size <= 0:
        raise DataError(f"class {true_class!r} has an empty word pool")
    return sum(logit for _, logit in _top_ranks(logits_row, word_classes, true_class, class_size))


def score_rank_weighted(
    logits_row: np.ndarray, word_classes: Sequence[str], true_class: str, class_size: int
) -> float:
    """Rank-weighted share of the top ``class_size`` positions held by own-class words."""
    if class_size <= 0:
        raise DataError(f"class {true_class!r} has an empty word pool")
    return sum(
        rank_weight(class_size, rank)
        for rank, _ in _top_ranks(logits_row, word_classes, true_class, class_size)
    )


def choose_scoring_method(
    matrix: LogitMatrix, pool: ClassWordPool, eligibility: dict[int, bool]
) -> str:
    """Fall back to rank weighting when logit sums would mix in negative values.

    If more than 10% of eligible samples have a negative own-class logit among
    their top ranks, summing is unreliable and rank weighting is used.
    """
    sizes = {name: len(words) for name, words in pool.words.items()}
    eligible_rows = [
        (row, label)
        for row, sample_id, label in zip(matrix.values, matrix.sample_ids, matrix.sample_labels)
        if eligibility.get(sample_id, False)
    ]
    if not eligible_rows:
        return TOP_LOGIT_SUM
    flagged = sum(
        1
        for row, label in eligible_rows
        if any(logit < 0 for _, logit in _top_ranks(row, matrix.word_classes, label, sizes[label]))
    )
    return RANK_WEIGHTED if flagged / len(eligible_rows) > 0.10 else TOP_LOGIT_SUM


def score_samples(
    matrix: LogitMatrix,
    pool: ClassWordPool,
    method: str,
    eligibility: dict[int, bool] | None = None,
) -> list[SampleScore]:
    """Score every sample; ineligible ones carry no value."""
    if method not in SCORING_METHODS:
        raise DataError(f"unknown scoring method {method!r}")
    if eligibility is None:
        eligibility = misprediction_filter(matrix, pool)
    scorer = score_top_logit_sum if method == TOP_LOGIT_SUM else score_rank_weighted
    sizes = {name: len(words) for name, words in pool.words.items()}
    scores: list[SampleScore] = []
    for row, sample_id, label in zip(matrix.values, matrix.sample_ids, matrix.sample_labels):
        if not eligibility.get(sample_id, False):
            scores.append(SampleScore(sample_id, label, method, None, False))
            continue
        value = scorer(row, matrix.word_classes, label, sizes[label])
        scores.append(SampleScore(sample_id, label, method, value, True))
    return scores


def select_and_order(
    scores: Sequence[SampleScore],
    k: int,
    balanced: bool,
    class_order: Sequence[str],
) -> DemonstrationPlan:
    """Pick the top-k samples per class and interleave them across classes.

    Classes are ordered by their best sample's score (ties fall back to
    ``class_order``); the plan lists every class's rank-1 sample first, then
    every rank-2 sample, and so on. Unbalanced mode drops the single
    highest-scoring pair from the balanced plan.
    """
    if k < 1:
        raise DataError("k must be >= 1")
    per_class: dict[str, list[SampleScore]] = {name: [] for name in class_order}
    for s in scores:
        if s.eligible:
            if s.label not in per_class:
                raise DataError(f"score for unknown class {s.label!r}")
            per_class[s.label].append(s)
    top_k: dict[str, list[SampleScore]] = {}
    for name in class_order:
        ranked = sorted(per_class[name], key=lambda s: (-s.value, s.sample_id))
        if len(ranked) < k:
            raise DataError(
                f"class {name!r} has only {len(ranked)} eligible samples, need {k}"
            )
        top_k[name] = ranked[:k]

    pool_rank = {name: i for i, name in enumerate(class_order)}
    ordered_classes = sorted(
        class_order, key=lambda name: (-top_k[name][0].value, pool_rank[name])
    )
    entries = [
        PlanEntry(sample_id=s.sample_id, label=name, score=float(s.value))
        for tier in range(k)
        for name in ordered_classes
        for s in [top_k[name][tier]]
    ]
    if balanced:
        return DemonstrationPlan(entries=entries, k=k, balanced=True)
    drop = max(range(len(entries)), key=lambda i: entries[i].score)
    trimmed = [e for i, e in enumerate(entries) if i != drop]
    return DemonstrationPlan(entries=trimmed, k=k, balanced=False)
