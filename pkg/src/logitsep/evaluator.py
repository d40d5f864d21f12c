"""Prediction, accuracy reports, and the demonstration-order permutation study."""

from __future__ import annotations

import csv
import hashlib
import itertools
import json
import math
import random
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

from .backend import LogitBackend, LogitQuery, batch_query
from .corpus import (
    ClassWordPool,
    LabeledDataset,
    PromptTemplate,
    class_word,
    render_prompt,
)
from .errors import DataError, PromptTooLongError
from .sampler import DemonstrationPlan

MODE_CLASS_NAMES = "class_names"
MODE_ANCHOR_WORDS = "anchor_words"
MODE_INSERTED_WORDS = "inserted_words"
MODE_FULL_POOL = "full_pool"
PREDICTION_MODES = (MODE_CLASS_NAMES, MODE_ANCHOR_WORDS, MODE_INSERTED_WORDS, MODE_FULL_POOL)


@dataclass
class PromptContext:
    """Everything needed to render a k-shot prompt and map candidates to classes."""

    template: PromptTemplate
    demos: list[tuple[str, str]]  # (text, label) in plan order
    sequences: dict[str, list[str]]  # label -> ordered label words
    class_names: list[str]
    pool: ClassWordPool | None = None

    @classmethod
    def build(
        cls,
        template: PromptTemplate,
        plan: DemonstrationPlan,
        train: LabeledDataset,
        sequences: Mapping[str, Sequence[str]],
        pool: ClassWordPool | None = None,
        class_names: Sequence[str] | None = None,
    ) -> "PromptContext":
        demos = [(train.by_id(e.sample_id).text, e.label) for e in plan.entries]
        return cls(
            template=template,
            demos=demos,
            sequences={k: list(v) for k, v in sequences.items()},
            class_names=list(class_names if class_names is not None else train.class_names),
            pool=pool,
        )

    def candidate_set(self, mode: str) -> list[tuple[str, str]]:
        """Ordered (candidate, class) pairs for a prediction mode.

        Order is class-name order, then within-class word order; prediction
        ties are broken by this order.
        """
        if mode == MODE_CLASS_NAMES:
            return [(class_word(name), name) for name in self.class_names]
        if mode == MODE_ANCHOR_WORDS:
            return [(self._sequence(name)[0], name) for name in self.class_names]
        if mode == MODE_INSERTED_WORDS:
            return [(w, name) for name in self.class_names for w in self._sequence(name)]
        if mode == MODE_FULL_POOL:
            if self.pool is None:
                raise DataError("full_pool mode needs a pool in the context")
            return [(w, name) for name in self.class_names for w in self.pool.words.get(name, [])]
        raise DataError(f"unknown prediction mode {mode!r}")

    def _sequence(self, name: str) -> list[str]:
        try:
            words = self.sequences[name]
        except KeyError:
            raise DataError(f"no label sequence for class {name!r}") from None
        if not words:
            raise DataError(f"label sequence for class {name!r} is empty")
        return words

    def demo_pairs(self) -> list[tuple[str, list[str]]]:
        return [(text, self._sequence(label)) for text, label in self.demos]


def truncate_demo_texts(
    template: PromptTemplate,
    demos: Sequence[tuple[str, Sequence[str]]],
    query_text: str,
    budget: int | None,
) -> tuple[list[tuple[str, Sequence[str]]], list[float]]:
    """Trim demo texts head-proportionally until the rendered prompt fits.

    Returns the adjusted demos and the per-demo truncated fraction. Raises
    when even empty demo texts cannot fit the budget.
    """
    demos = [(text, words) for text, words in demos]
    fractions = [0.0] * len(demos)
    if budget is None:
        return demos, fractions
    overshoot = len(render_prompt(template, demos, query_text)) - budget
    if overshoot <= 0:
        return demos, fractions
    lengths = [len(text) for text, _ in demos]
    total = sum(lengths)
    if overshoot > total:
        raise PromptTooLongError(budget + overshoot, budget)
    cuts = [overshoot * n // total for n in lengths]
    shortfall = overshoot - sum(cuts)
    for i in range(len(cuts)):
        if shortfall == 0:
            break
        extra = min(shortfall, lengths[i] - cuts[i])
        cuts[i] += extra
        shortfall -= extra
    trimmed = [(text[cut:], words) for (text, words), cut in zip(demos, cuts)]
    fractions = [cut / n if n else 0.0 for cut, n in zip(cuts, lengths)]
    return trimmed, fractions


def _prompt_for(
    context: PromptContext, query_text: str, budget: int | None
) -> tuple[str, list[float]]:
    demos, fractions = truncate_demo_texts(
        context.template, context.demo_pairs(), query_text, budget
    )
    return render_prompt(context.template, demos, query_text), fractions


def predict(
    context: PromptContext, query_text: str, mode: str, backend: LogitBackend
) -> str:
    """Class of the argmax candidate for one query; first candidate wins ties."""
    candidates = context.candidate_set(mode)
    prompt, _ = _prompt_for(context, query_text, backend.max_prompt_chars)
    table = backend.query(LogitQuery(prompt, tuple(c for c, _ in candidates)))
    return _argmax_class(candidates, table)


def _argmax_class(candidates: Sequence[tuple[str, str]], table: Mapping[str, float]) -> str:
    best_label = candidates[0][1]
    best_value = -math.inf
    for cand, label in candidates:
        value = table[cand]
        if value > best_value:
            best_value = value
            best_label = label
    return best_label


@dataclass
class EvalReport:
    accuracy: float
    per_class_accuracy: dict[str, float | None]
    confusion: dict[str, dict[str, int]]
    n_test: int
    mode: str
    plan_digest: str
    sequence_digest: str
    truncation: dict = field(default_factory=dict)

    def to_json_obj(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "per_class_accuracy": self.per_class_accuracy,
            "confusion": self.confusion,
            "n_test": self.n_test,
            "mode": self.mode,
            "plan_digest": self.plan_digest,
            "sequence_digest": self.sequence_digest,
            "truncation": self.truncation,
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(
            json.dumps(self.to_json_obj(), indent=2, ensure_ascii=False) + "\n",
            encoding="utf-8",
        )


def digest(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode("utf-8")).hexdigest()[:12]


def evaluate(
    test: LabeledDataset,
    context: PromptContext,
    mode: str,
    backend: LogitBackend,
    parallelism: int = 1,
    logits_csv: str | Path | None = None,
) -> EvalReport:
    """Accuracy and confusion counts over a test set, aggregated by example id."""
    if not len(test):
        raise DataError("empty test set")
    candidates = context.candidate_set(mode)
    cand_tuple = tuple(c for c, _ in candidates)

    prompts: list[str] = []
    worst_fractions: list[float] = []
    truncated_count = 0
    budget = backend.max_prompt_chars
    for ex in test:
        prompt, fractions = _prompt_for(context, ex.text, budget)
        prompts.append(prompt)
        if any(f > 0 for f in fractions):
            truncated_count += 1
            if sum(fractions) > sum(worst_fractions):
                worst_fractions = fractions
    tables = batch_query(
        backend, [LogitQuery(p, cand_tuple) for p in prompts], parallelism
    )

    order = list(context.class_names)
    confusion = {true: {pred: 0 for pred in order} for true in order}
    correct = 0
    by_id = {}
    for ex, table in zip(test, tables):
        predicted = _argmax_class(candidates, table)
        by_id[ex.id] = (ex.label, predicted, table)
        confusion[ex.label][predicted] += 1
        if predicted == ex.label:
            correct += 1

    per_class: dict[str, float | None] = {}
    for name in order:
        total = sum(confusion[name].values())
        per_class[name] = confusion[name][name] / total if total else None

    if logits_csv is not None:
        class_of = dict(candidates)
        with Path(logits_csv).open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["example_id", "candidate", "class", "logit"])
            for ex in test:
                table = by_id[ex.id][2]
                for cand in cand_tuple:
                    writer.writerow([ex.id, cand, class_of[cand], table[cand]])

    return EvalReport(
        accuracy=correct / len(test),
        per_class_accuracy=per_class,
        confusion=confusion,
        n_test=len(test),
        mode=mode,
        plan_digest=digest(context.demos),
        sequence_digest=digest(context.sequences),
        truncation={
            "budget": budget,
            "prompts_truncated": truncated_count,
            "worst_demo_fractions": worst_fractions,
        },
    )


@dataclass
class PermutationStudy:
    n_requested: int
    n_evaluated: int
    results: list[tuple[list[int], float]]  # (plan order as sample ids, accuracy)

    def to_json_obj(self) -> dict:
        return {
            "n_requested": self.n_requested,
            "n_evaluated": self.n_evaluated,
            "shortfall": self.n_requested - self.n_evaluated,
            "results": [
                {"order": order, "accuracy": acc} for order, acc in self.results
            ],
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(
            json.dumps(self.to_json_obj(), indent=2, ensure_ascii=False) + "\n",
            encoding="utf-8",
        )


def sample_permutations(n_items: int, n_perms: int, seed: int) -> list[tuple[int, ...]]:
    """Distinct index orderings excluding the identity, seeded and reproducible.

    Small plans are enumerated exactly; larger ones are rejection-sampled
    with seeded shuffles. May return fewer than requested when fewer distinct
    non-identity orderings exist.
    """
    if n_perms < 1:
        raise DataError("n_perms must be >= 1")
    if n_items < 2:
        raise DataError("permutation study needs a plan of length >= 2")
    identity = tuple(range(n_items))
    if n_items <= 8 and math.factorial(n_items) - 1 <= n_perms:
        return [p for p in itertools.permutations(range(n_items)) if p != identity]
    rng = random.Random(seed)
    seen: set[tuple[int, ...]] = set()
    out: list[tuple[int, ...]] = []
    indices = list(range(n_items))
    while len(out) < n_perms:
        rng.shuffle(indices)
        perm = tuple(indices)
        if perm == identity or perm in seen:
            continue
        seen.add(perm)
        out.append(perm)
    return out


def permutation_study(
    plan: DemonstrationPlan,
    n_perms: int,
    seed: int,
    test: LabeledDataset,
    context: PromptContext,
    mode: str,
    backend: LogitBackend,
    parallelism: int = 1,
) -> PermutationStudy:
    """Re-evaluate the plan under sampled alternative demonstration orders."""
    perms = sample_permutations(len(context.demos), n_perms, seed)
    results: list[tuple[list[int], float]] = []
    ids = plan.sample_ids()
    for perm in perms:
        permuted = replace(context, demos=[context.demos[i] for i in perm])
        report = evaluate(test, permuted, mode, backend, parallelism)
        results.append(([ids[i] for i in perm], report.accuracy))
    return PermutationStudy(n_requested=n_perms, n_evaluated=len(perms), results=results)
