"""Two-stage class-word pool refinement.

Stage one keeps a word only if its mean zero-shot logit over same-class
training samples strictly beats its mean over every other class group.
Stage two keeps it only if the point-biserial correlation between its logits
and the same-class/other-class split is positive.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .backend import LogitBackend, LogitQuery, batch_query
from .corpus import ClassWordPool, LabeledDataset, PromptTemplate, render_prompt
from .errors import DataError


@dataclass(frozen=True)
class BiserialStats:
    """Point-biserial correlation of one word's logits against a binary label split."""

    v0: float  # mean logit over same-label samples
    v1: float  # mean logit over different-label samples
    sigma: float  # population std over all samples
    n0: int
    n1: int
    r: float


def point_biserial(word_logits, same_label_mask) -> BiserialStats:
    """Correlate a logit vector with a same-label/other-label split.

    ``r = (v0 - v1) / sigma * sqrt(n0 * n1 / (n0 + n1)^2)`` with sigma the
    population standard deviation over all samples; r is defined as 0 when
    sigma is 0.
    """
    logits = np.asarray(word_logits, dtype=float)
    mask = np.asarray(same_label_mask, dtype=bool)
    if logits.shape != mask.shape or logits.ndim != 1:
        raise DataError("logits and mask must be 1-d and aligned")
    n0 = int(mask.sum())
    n1 = int((~mask).sum())
    if n0 == 0 or n1 == 0:
        raise DataError("mask must contain both same-label and different-label samples")
    v0 = float(logits[mask].mean())
    v1 = float(logits[~mask].mean())
    sigma = float(logits.std())  # population, no Bessel correction
    if sigma == 0.0:
        r = 0.0
    else:
        r = (v0 - v1) / sigma * float(np.sqrt(n0 * n1 / (n0 + n1) ** 2))
    return BiserialStats(v0=v0, v1=v1, sigma=sigma, n0=n0, n1=n1, r=r)


@dataclass
class LogitMatrix:
    """Zero-shot logits, one row per sample and one column per pool word."""

    sample_ids: list[int]
    sample_labels: list[str]
    words: list[str]
    word_classes: list[str]
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape != (len(self.sample_ids), len(self.words)):
            raise DataError("logit matrix shape does not match its index lists")

    def column(self, word: str) -> np.ndarray:
        return self.values[:, self.words.index(word)]

    def label_rows(self, label: str) -> np.ndarray:
        return np.array([lab == label for lab in self.sample_labels], dtype=bool)

    def select_words(self, keep: list[str]) -> "LogitMatrix":
        """Column-subset view for a smaller pool; keeps the given word order."""
        idx = [self.words.index(w) for w in keep]
        return LogitMatrix(
            sample_ids=list(self.sample_ids),
            sample_labels=list(self.sample_labels),
            words=list(keep),
            word_classes=[self.word_classes[i] for i in idx],
            values=self.values[:, idx],
        )


def zero_shot_logit_matrix(
    dataset: LabeledDataset,
    pool: ClassWordPool,
    template: PromptTemplate,
    backend: LogitBackend,
    parallelism: int = 1,
) -> LogitMatrix:
    """Query every (sample, pool word) logit under the zero-shot prompt."""
    flat = pool.flat_words()
    words = [w for w, _ in flat]
    word_classes = [c for _, c in flat]
    candidates = tuple(words)
    queries = [
        LogitQuery(render_prompt(template, [], ex.text), candidates) for ex in dataset
    ]
    tables = batch_query(backend, queries, parallelism)
    values = np.array([[table[w] for w in words] for table in tables], dtype=float)
    return LogitMatrix(
        sample_ids=[ex.id for ex in dataset],
        sample_labels=[ex.label for ex in dataset],
        words=words,
        word_classes=word_classes,
        values=values,
    )


def dominance_filter(matrix: LogitMatrix, pool: ClassWordPool) -> set[str]:
    """Words whose own-class mean logit strictly beats every other class group mean."""
    label_masks = {}
    for name in pool.classes:
        mask = matrix.label_rows(name)
        if not mask.any():
            raise DataError(f"class {name!r} has no training samples")
        label_masks[name] = mask
    survivors: set[str] = set()
    for word, own_class in zip(matrix.words, matrix.word_classes):
        col = matrix.column(word)
        own_mean = col[label_masks[own_class]].mean()
        if all(
            own_mean > col[label_masks[other]].mean()
            for other in pool.classes
            if other != own_class
        ):
            survivors.add(word)
    return survivors


@dataclass
class WordDecision:
    word: str
    label: str
    kept: bool
    stage: str | None  # failing stage for dropped words, None for kept ones
    stats: BiserialStats | None


@dataclass
class RefinementReport:
    decisions: list[WordDecision]

    def dropped(self) -> list[WordDecision]:
        return [d for d in self.decisions if not d.kept]

    def to_json_obj(self) -> list[dict]:
        rows = []
        for d in self.decisions:
            rows.append(
                {
                    "word": d.word,
                    "class": d.label,
                    "kept": d.kept,
                    "stage": d.stage,
                    "v0": d.stats.v0 if d.stats else None,
                    "v1": d.stats.v1 if d.stats else None,
                    "sigma": d.stats.sigma if d.stats else None,
                    "r": d.stats.r if d.stats else None,
                }
            )
        return rows

    def save(self, path: str | Path) -> None:
        Path(path).write_text(
            json.dumps(self.to_json_obj(), indent=2, ensure_ascii=False) + "\n",
            encoding="utf-8",
        )


def refine_pool(
    train: LabeledDataset,
    pool: ClassWordPool,
    template: PromptTemplate,
    backend: LogitBackend,
    parallelism: int = 1,
    matrix: LogitMatrix | None = None,
) -> tuple[ClassWordPool, RefinementReport]:
    """Apply both filter stages, preserving per-class word order.

    A precomputed ``matrix`` may be passed to avoid re-querying; it must cover
    exactly this pool's words over this training set.
    """
    missing = [n for n in train.class_names if n not in pool.words]
    if missing:
        raise DataError(f"training labels missing from pool: {missing}")
    for name in pool.classes:
        if name not in train.class_names:
            raise DataError(f"pool class {name!r} has no training samples")
    if matrix is None:
        matrix = zero_shot_logit_matrix(train, pool, template, backend, parallelism)
    dominant = dominance_filter(matrix, pool)

    decisions: list[WordDecision] = []
    kept_words: dict[str, list[str]] = {name: [] for name in pool.classes}
    for word, own_class in zip(matrix.words, matrix.word_classes):
        if word not in dominant:
            decisions.append(WordDecision(word, own_class, False, "dominance", None))
            continue
        stats = point_biserial(matrix.column(word), matrix.label_rows(own_class))
        if stats.r > 0:
            kept_words[own_class].append(word)
            decisions.append(WordDecision(word, own_class, True, None, stats))
        else:
            decisions.append(WordDecision(word, own_class, False, "biserial", stats))

    for name, words in kept_words.items():
        if not words:
            raise DataError(f"class {name!r} has no separable words")
    refined = ClassWordPool(words=kept_words, refined=True)
    return refined, RefinementReport(decisions=decisions)
