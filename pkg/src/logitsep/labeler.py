"""Label organization: anchor word updates and sequential forward insertion.

Each class carries an ordered word sequence that labels its demonstrations.
The sequence starts from an anchor (the class name, unless a pool word beats
it zero-shot) and grows one word per round, choosing the candidate with the
highest mean dev-set logit under the current demonstrations. Growth stops
when the pool runs dry, the round budget is spent, or dev accuracy falls
below the best seen, in which case the sequences revert to the best round.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping

import numpy as np

from .backend import LogitBackend, LogitQuery, batch_query
from .corpus import ClassWordPool, LabeledDataset, PromptTemplate, class_word, render_prompt
from .errors import DataError
from .sampler import DemonstrationPlan

STOP_POOL_EXHAUSTED = "pool_exhausted"
STOP_ACCURACY_DECREASED = "accuracy_decreased"
STOP_MAX_ROUNDS = "max_rounds"


@dataclass
class LabelSequence:
    label: str
    words: list[str]

    def __post_init__(self):
        if not self.words:
            raise DataError(f"label sequence for {self.label!r} is empty")
        if len(set(self.words)) != len(self.words):
            raise DataError(f"label sequence for {self.label!r} repeats a word")

    @property
    def anchor(self) -> str:
        return self.words[0]


def sequences_to_words(sequences: Mapping[str, LabelSequence]) -> dict[str, list[str]]:
    return {label: list(seq.words) for label, seq in sequences.items()}


def save_sequences(sequences: Mapping[str, LabelSequence], path: str | Path) -> None:
    """Write sequences in the pool file format (class name to word list)."""
    Path(path).write_text(
        json.dumps(sequences_to_words(sequences), indent=2, ensure_ascii=False) + "\n",
        encoding="utf-8",
    )


def load_sequences(path: str | Path) -> dict[str, LabelSequence]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"label sequence file not found: {path}")
    raw = json.loads(path.read_text(encoding="utf-8"))
    if not isinstance(raw, dict):
        raise DataError(f"{path}: label sequences must map class names to word lists")
    seen: dict[str, str] = {}
    for label, words in raw.items():
        for w in words:
            if w in seen and seen[w] != label:
                raise DataError(f"{path}: word {w!r} appears under two classes")
            seen[w] = label
    return {label: LabelSequence(label, list(words)) for label, words in raw.items()}


@dataclass
class InsertionRound:
    index: int
    dev_accuracy: float
    chosen: dict[str, str] | None = None
    candidate_means: dict[str, dict[str, float]] | None = None
    per_class_accuracy: dict[str, float] | None = None


@dataclass
class InsertionTrace:
    rounds: list[InsertionRound]
    final_round: int
    final_n: dict[str, int]
    stop_reason: str

    def to_json_obj(self) -> dict:
        return {
            "rounds": [
                {
                    "round": r.index,
                    "dev_accuracy": r.dev_accuracy,
                    "chosen": r.chosen,
                    "candidate_means": r.candidate_means,
                    "per_class_accuracy": r.per_class_accuracy,
                }
                for r in self.rounds
            ],
            "final_round": self.final_round,
            "final_n": self.final_n,
            "stop_reason": self.stop_reason,
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(
            json.dumps(self.to_json_obj(), indent=2, ensure_ascii=False) + "\n",
            encoding="utf-8",
        )


@dataclass
class InsertionConfig:
    max_rounds: int = 8
    guide_mode: str = "anchor"  # dev accuracy candidates: "anchor" or "inserted"
    per_class_stopping: bool = False
    parallelism: int = 1


def _demo_pairs(
    plan: DemonstrationPlan,
    train: LabeledDataset,
    sequences: Mapping[str, LabelSequence],
) -> list[tuple[str, list[str]]]:
    return [
        (train.by_id(entry.sample_id).text, list(sequences[entry.label].words))
        for entry in plan.entries
    ]


def initial_word_update(
    plan: DemonstrationPlan,
    train: LabeledDataset,
    pool: ClassWordPool,
    template: PromptTemplate,
    backend: LogitBackend,
    parallelism: int = 1,
    rank_over_all_samples: bool = False,
) -> dict[str, LabelSequence]:
    """Pick each class's anchor word from its refined pool.

    Pool words are ranked by mean zero-shot logit over the plan's samples of
    that class (or over all plan samples with ``rank_over_all_samples``). The
    class name keeps the anchor spot only if it ranks first.
    """
    anchors: dict[str, LabelSequence] = {}
    for label in pool.classes:
        entries = [e for e in plan.entries if e.label == label]
        if rank_over_all_samples:
            entries = plan.entries
        if not entries:
            raise DataError(f"plan has no samples for class {label!r}")
        candidates = tuple(pool.words[label])
        queries = [
            LogitQuery(render_prompt(template, [], train.by_id(e.sample_id).text), candidates)
            for e in entries
        ]
        tables = batch_query(backend, queries, parallelism)
        means = np.array([[t[w] for w in candidates] for t in tables], dtype=float).mean(axis=0)
        best = candidates[int(np.argmax(means))]  # ties go to pool order
        name_word = class_word(label)
        anchor = name_word if best == name_word else best
        anchors[label] = LabelSequence(label, [anchor])
    return anchors


def insertion_round(
    sequences: Mapping[str, LabelSequence],
    plan: DemonstrationPlan,
    train: LabeledDataset,
    dev: LabeledDataset,
    pool_remaining: Mapping[str, list[str]],
    template: PromptTemplate,
    backend: LogitBackend,
    parallelism: int = 1,
) -> tuple[dict[str, LabelSequence], dict[str, str], dict[str, dict[str, float]]]:
    """Append one word per class, chosen by mean dev logit under the current demos.

    Selection for every class is computed against the round-start sequences;
    classes with no remaining candidates are skipped.
    """
    if not any(pool_remaining.get(label) for label in sequences):
        raise DataError("nothing to insert: every class pool is exhausted")
    demos = _demo_pairs(plan, train, sequences)

    queries: list[LogitQuery] = []
    spans: list[tuple[str, tuple[str, ...], int]] = []  # (label, candidates, n_dev)
    for label in sequences:
        remaining = tuple(pool_remaining.get(label, ()))
        if not remaining:
            continue
        dev_samples = dev.with_label(label)
        if not dev_samples:
            raise DataError(f"dev set has no samples for class {label!r}")
        spans.append((label, remaining, len(dev_samples)))
        for ex in dev_samples:
            queries.append(LogitQuery(render_prompt(template, demos, ex.text), remaining))
    tables = batch_query(backend, queries, parallelism)

    chosen: dict[str, str] = {}
    means: dict[str, dict[str, float]] = {}
    new_sequences = {label: LabelSequence(label, list(seq.words)) for label, seq in sequences.items()}
    offset = 0
    for label, remaining, n_dev in spans:
        block = tables[offset : offset + n_dev]
        offset += n_dev
        class_means = {
            w: float(np.mean([t[w] for t in block])) for w in remaining
        }
        best = max(remaining, key=lambda w: class_means[w])  # first max wins on ties
        chosen[label] = best
        means[label] = class_means
        new_sequences[label].words.append(best)
    return new_sequences, chosen, means


def run_insertion(
    anchors: Mapping[str, LabelSequence],
    plan: DemonstrationPlan,
    train: LabeledDataset,
    dev: LabeledDataset,
    pool: ClassWordPool,
    template: PromptTemplate,
    backend: LogitBackend,
    config: InsertionConfig | None = None,
    evaluate_fn: Callable[[Mapping[str, LabelSequence]], "object"] | None = None,
) -> tuple[dict[str, LabelSequence], InsertionTrace]:
    """Grow label sequences until the pool, the round budget, or dev accuracy stops it.

    ``evaluate_fn`` maps the current sequences to a dev evaluation; by default
    it predicts over the configured candidate set and scores accuracy. The
    returned sequences are those of the earliest round with peak dev accuracy.
    """
    config = config or InsertionConfig()
    if evaluate_fn is None:
        evaluate_fn = _dev_accuracy_fn(plan, train, dev, pool, template, backend, config)

    remaining = {
        label: [w for w in pool.words.get(label, []) if w not in anchors[label].words]
        for label in anchors
    }
    snapshots = [{label: LabelSequence(label, list(seq.words)) for label, seq in anchors.items()}]
    rounds: list[InsertionRound] = []

    report = evaluate_fn(snapshots[0])
    accuracy, per_class = _unpack_eval(report)
    rounds.append(InsertionRound(0, accuracy, per_class_accuracy=per_class))

    if config.per_class_stopping:
        return _run_per_class(
            anchors, plan, train, dev, remaining, template, backend, config,
            evaluate_fn, snapshots, rounds,
        )

    best_accuracy = accuracy
    stop_reason = STOP_POOL_EXHAUSTED
    while True:
        if not any(remaining.values()):
            stop_reason = STOP_POOL_EXHAUSTED
            break
        if len(rounds) > config.max_rounds:
            stop_reason = STOP_MAX_ROUNDS
            break
        sequences, chosen, means = insertion_round(
            snapshots[-1], plan, train, dev, remaining, template, backend, config.parallelism
        )
        for label, word in chosen.items():
            remaining[label].remove(word)
        snapshots.append(sequences)
        report = evaluate_fn(sequences)
        accuracy, per_class = _unpack_eval(report)
        rounds.append(
            InsertionRound(len(rounds), accuracy, chosen=chosen, candidate_means=means,
                           per_class_accuracy=per_class)
        )
        if accuracy < best_accuracy:
            stop_reason = STOP_ACCURACY_DECREASED
            break
        best_accuracy = max(best_accuracy, accuracy)

    final_round = max(range(len(rounds)), key=lambda i: rounds[i].dev_accuracy)
    # max() keeps the earliest index on ties, which is the revert target we want
    final = snapshots[final_round]
    trace = InsertionTrace(
        rounds=rounds,
        final_round=final_round,
        final_n={label: len(seq.words) for label, seq in final.items()},
        stop_reason=stop_reason,
    )
    return final, trace


def _run_per_class(
    anchors, plan, train, dev, remaining, template, backend, config,
    evaluate_fn, snapshots, rounds,
):
    """Variant stopping rule: each class freezes on its own dev-accuracy drop."""
    per_class0 = rounds[0].per_class_accuracy
    if per_class0 is None:
        raise DataError("per-class stopping needs per-class dev accuracies")
    best = {label: (acc, 0) for label, acc in per_class0.items()}
    frozen: set[str] = set()
    stop_reason = STOP_POOL_EXHAUSTED
    while True:
        active = {
            label: words for label, words in remaining.items()
            if words and label not in frozen
        }
        if not active:
            stop_reason = STOP_ACCURACY_DECREASED if frozen else STOP_POOL_EXHAUSTED
            break
        if len(rounds) > config.max_rounds:
            stop_reason = STOP_MAX_ROUNDS
            break
        sequences, chosen, means = insertion_round(
            snapshots[-1], plan, train, dev, active, template, backend, config.parallelism
        )
        for label, word in chosen.items():
            remaining[label].remove(word)
        snapshots.append(sequences)
        report = evaluate_fn(sequences)
        accuracy, per_class = _unpack_eval(report)
        index = len(rounds)
        rounds.append(
            InsertionRound(index, accuracy, chosen=chosen, candidate_means=means,
                           per_class_accuracy=per_class)
        )
        if per_class is None:
            raise DataError("per-class stopping needs per-class dev accuracies")
        for label in chosen:
            acc = per_class.get(label)
            if acc is None:
                raise DataError(f"no dev accuracy recorded for class {label!r}")
            if acc < best[label][0]:
                frozen.add(label)
            elif acc > best[label][0]:
                best[label] = (acc, index)

    final = {
        label: LabelSequence(label, list(snapshots[best[label][1]][label].words))
        for label in anchors
    }
    final_round = max(best[label][1] for label in anchors)
    trace = InsertionTrace(
        rounds=rounds,
        final_round=final_round,
        final_n={label: len(seq.words) for label, seq in final.items()},
        stop_reason=stop_reason,
    )
    return final, trace


def _unpack_eval(report) -> tuple[float, dict[str, float] | None]:
    if isinstance(report, (int, float)):
        return float(report), None
    return float(report.accuracy), dict(report.per_class_accuracy)


def _dev_accuracy_fn(plan, train, dev, pool, template, backend, config):
    from .evaluator import MODE_ANCHOR_WORDS, MODE_INSERTED_WORDS, PromptContext, evaluate

    mode = MODE_INSERTED_WORDS if config.guide_mode == "inserted" else MODE_ANCHOR_WORDS

    def evaluate_fn(sequences: Mapping[str, LabelSequence]):
        context = PromptContext.build(
            template=template,
            plan=plan,
            train=train,
            sequences=sequences_to_words(sequences),
            pool=pool,
            class_names=list(dev.class_names),
        )
        return evaluate(dev, context, mode, backend, parallelism=config.parallelism)

    return evaluate_fn
