"""Datasets, class-word pools, prompt templates, and prompt rendering.

Everything in this module is plain immutable-after-load data. Prompt rendering
is byte-exact: downstream stages cache logits per (prompt, candidate) pair, so
two logically equal prompts must be the same string.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .errors import DataError


def class_word(class_name: str) -> str:
    """Candidate-string form of a class name: the name with a single leading space."""
    return " " + class_name


@dataclass(frozen=True)
class LabeledExample:
    id: int
    text: str
    label: str


@dataclass
class LabeledDataset:
    """An ordered collection of labeled text samples.

    ``class_names`` preserves first-appearance order and is the canonical
    class ordering for everything derived from this dataset.
    """

    examples: list[LabeledExample]
    class_names: list[str]

    def __post_init__(self):
        if len(set(self.class_names)) != len(self.class_names):
            raise DataError("duplicate class names")
        if len(self.class_names) < 2:
            raise DataError("dataset needs at least 2 classes")
        known = set(self.class_names)
        seen_ids = set()
        for ex in self.examples:
            if ex.label not in known:
                raise DataError(f"example {ex.id} has unknown label {ex.label!r}")
            if not ex.text:
                raise DataError(f"example {ex.id} has empty text")
            if ex.id in seen_ids:
                raise DataError(f"duplicate example id {ex.id}")
            seen_ids.add(ex.id)

    def __len__(self) -> int:
        return len(self.examples)

    def __iter__(self):
        return iter(self.examples)

    def by_id(self, example_id: int) -> LabeledExample:
        if not hasattr(self, "_index"):
            self._index = {ex.id: ex for ex in self.examples}
        return self._index[example_id]

    def ids(self) -> set[int]:
        return {ex.id for ex in self.examples}

    def with_label(self, label: str) -> list[LabeledExample]:
        return [ex for ex in self.examples if ex.label == label]


@dataclass
class DatasetSplit:
    train: LabeledDataset
    dev: LabeledDataset
    test: LabeledDataset


def load_dataset(path: str | Path) -> LabeledDataset:
    """Load a JSONL dataset of ``{"text": str, "label": str}`` records.

    Example ids are assigned 0..n-1 in file order; class names are collected
    in first-appearance order.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"dataset file not found: {path}")
    examples: list[LabeledExample] = []
    class_names: list[str] = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}: line {lineno}: invalid JSON ({exc.msg})") from exc
            if not isinstance(record, dict) or "text" not in record or "label" not in record:
                raise DataError(f"{path}: line {lineno}: record must have 'text' and 'label' fields")
            text, label = record["text"], record["label"]
            if not isinstance(text, str) or not isinstance(label, str):
                raise DataError(f"{path}: line {lineno}: 'text' and 'label' must be strings")
            if label not in class_names:
                class_names.append(label)
            examples.append(LabeledExample(id=len(examples), text=text, label=label))
    if not examples:
        raise DataError(f"{path}: empty dataset")
    return LabeledDataset(examples=examples, class_names=class_names)


def dumps_dataset(dataset: LabeledDataset) -> str:
    lines = [
        json.dumps({"text": ex.text, "label": ex.label}, ensure_ascii=False)
        for ex in dataset.examples
    ]
    return "\n".join(lines) + "\n"


def save_dataset(dataset: LabeledDataset, path: str | Path) -> None:
    Path(path).write_text(dumps_dataset(dataset), encoding="utf-8")


def offset_ids(dataset: LabeledDataset, offset: int) -> LabeledDataset:
    """Shift every example id; used to keep split partitions disjoint by id."""
    examples = [
        LabeledExample(id=ex.id + offset, text=ex.text, label=ex.label)
        for ex in dataset.examples
    ]
    return LabeledDataset(examples=examples, class_names=list(dataset.class_names))


def derive_dev(train: LabeledDataset, demo_ids: Iterable[int]) -> LabeledDataset:
    """Validation set: the training set minus the demonstration samples, order kept."""
    demo_ids = set(demo_ids)
    missing = demo_ids - train.ids()
    if missing:
        raise DataError(f"demo ids not in training set: {sorted(missing)}")
    kept = [ex for ex in train.examples if ex.id not in demo_ids]
    if not kept:
        raise DataError("empty dev set: all training samples are demonstrations")
    return LabeledDataset(examples=kept, class_names=list(train.class_names))


@dataclass
class ClassWordPool:
    """Per-class ordered candidate word lists.

    Words are stored exactly as they will be sent to the backend, leading
    space included (e.g. ``" negative"``). Unrefined pools must contain each
    class name (in leading-space form) in the class's own list; refined pools
    may have lost theirs to filtering, in which case the class survives in
    the registry (``classes``) only.
    """

    words: dict[str, list[str]]
    refined: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if len(self.words) < 2:
            raise DataError("pool needs at least 2 classes")
        seen: dict[str, str] = {}
        for name, wordlist in self.words.items():
            if not wordlist:
                raise DataError(f"class {name!r} has an empty word list")
            for w in wordlist:
                if w in seen and seen[w] != name:
                    raise DataError(f"word {w!r} appears under both {seen[w]!r} and {name!r}")
                if wordlist.count(w) > 1:
                    raise DataError(f"word {w!r} repeated under class {name!r}")
                seen[w] = name
            if not self.refined and class_word(name) not in wordlist:
                raise DataError(f"class {name!r} is missing its own name word {class_word(name)!r}")

    @property
    def classes(self) -> list[str]:
        return list(self.words)

    def flat_words(self) -> list[tuple[str, str]]:
        """All (word, class) pairs in pool order: class order, then list order."""
        return [(w, name) for name, wordlist in self.words.items() for w in wordlist]

    def word_class(self) -> dict[str, str]:
        return {w: name for w, name in self.flat_words()}


def load_pool(path: str | Path, refined: bool = False) -> ClassWordPool:
    path = Path(path)
    if not path.exists():
        raise DataError(f"pool file not found: {path}")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON ({exc.msg})") from exc
    if not isinstance(raw, dict) or not all(
        isinstance(k, str) and isinstance(v, list) and all(isinstance(w, str) for w in v)
        for k, v in raw.items()
    ):
        raise DataError(f"{path}: pool must map class names to lists of words")
    return ClassWordPool(words={k: list(v) for k, v in raw.items()}, refined=refined)


def save_pool(pool: ClassWordPool, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(pool.words, indent=2, ensure_ascii=False) + "\n", encoding="utf-8"
    )


@dataclass(frozen=True)
class PromptTemplate:
    """Fixed strings wrapped around sample texts and label words."""

    input_prefix: str
    label_prefix: str
    line_separator: str = "\n"
    pair_separator: str = "\n"


def load_template(path: str | Path) -> PromptTemplate:
    path = Path(path)
    if not path.exists():
        raise DataError(f"template file not found: {path}")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON ({exc.msg})") from exc
    if not isinstance(raw, dict) or "input_prefix" not in raw or "label_prefix" not in raw:
        raise DataError(f"{path}: template needs 'input_prefix' and 'label_prefix'")
    return PromptTemplate(
        input_prefix=raw["input_prefix"],
        label_prefix=raw["label_prefix"],
        line_separator=raw.get("line_separator", "\n"),
        pair_separator=raw.get("pair_separator", "\n"),
    )


def render_label_words(words: Sequence[str]) -> str:
    """Join a label word sequence for rendering after the label prefix.

    The first word keeps its stored leading space; every following word is
    separated by exactly one space regardless of its stored form.
    """
    if not words:
        raise DataError("label word sequence is empty")
    parts = [words[0]]
    parts.extend(" " + w.lstrip(" ") for w in words[1:])
    return "".join(parts)


def render_prompt(
    template: PromptTemplate,
    demos: Sequence[tuple[str, Sequence[str]]],
    query_text: str,
) -> str:
    """Render a k-shot prompt.

    Each demo is ``(text, label_words)``; the query is appended with an empty
    label so the prompt ends exactly with ``label_prefix``.
    """
    pieces: list[str] = []
    for text, words in demos:
        pieces.append(
            template.input_prefix
            + text
            + template.line_separator
            + template.label_prefix
            + render_label_words(words)
            + template.pair_separator
        )
    pieces.append(template.input_prefix + query_text + template.line_separator + template.label_prefix)
    return "".join(pieces)
