import json

import pytest

from logitsep.backend import SyntheticBackend, SyntheticModelSpec
from logitsep.corpus import ClassWordPool, LabeledDataset, LabeledExample, PromptTemplate


def make_dataset(classes, per_class, start_id=0, text_prefix="sample"):
    examples = []
    next_id = start_id
    for i in range(per_class):
        for name in classes:
            examples.append(
                LabeledExample(id=next_id, text=f"{text_prefix} {next_id} of {name}", label=name)
            )
            next_id += 1
    return LabeledDataset(examples=examples, class_names=list(classes))


@pytest.fixture
def template():
    return PromptTemplate(input_prefix="Review: ", label_prefix="Sentiment:")


@pytest.fixture
def two_class_pool():
    return ClassWordPool(
        words={
            "alpha": [" alpha", " apt", " able"],
            "beta": [" beta", " bold", " brisk"],
        }
    )


def write_project(root, parallelism=1, extra_config=None):
    """Materialize a complete planted project on disk and return its config path.

    Two distractor words (planted to answer for the wrong class) and two
    anti-planted samples (planted to behave as the other class) exercise the
    refinement and misprediction filters; strengths are distinct so the plan
    is the maximum-strength sample of each class.
    """
    root.mkdir(parents=True, exist_ok=True)
    classes = ["alpha", "beta"]
    train = make_dataset(classes, per_class=8)
    test = make_dataset(classes, per_class=2, start_id=100, text_prefix="query")

    lines = [
        json.dumps({"text": ex.text, "label": ex.label}, ensure_ascii=False)
        for ex in train
    ]
    (root / "train.jsonl").write_text("\n".join(lines) + "\n", encoding="utf-8")
    lines = [
        json.dumps({"text": ex.text, "label": ex.label}, ensure_ascii=False)
        for ex in test
    ]
    (root / "test.jsonl").write_text("\n".join(lines) + "\n", encoding="utf-8")

    pool = {
        "alpha": [" alpha", " apt", " dull"],
        "beta": [" beta", " bold", " drab"],
    }
    (root / "pool.json").write_text(json.dumps(pool, indent=2) + "\n", encoding="utf-8")
    (root / "template.json").write_text(
        json.dumps({"input_prefix": "Review: ", "label_prefix": "Sentiment:"}) + "\n",
        encoding="utf-8",
    )
    model = {
        "affinity": {
            "alpha": {"alpha": 2.0, "beta": 0.0},
            "beta": {"alpha": 0.0, "beta": 2.0},
        },
        "sample_strength": {str(ex.id): 0.4 + 0.03 * ex.id for ex in train},
        "word_class_overrides": {" dull": "beta", " drab": "alpha"},
        "sample_class_overrides": {"12": "beta", "13": "alpha"},
        "seed": 5,
    }
    (root / "model.json").write_text(json.dumps(model, indent=2) + "\n", encoding="utf-8")

    config = {
        "dataset": "train.jsonl",
        "test": "test.jsonl",
        "pool": "pool.json",
        "template": "template.json",
        "synthetic": "model.json",
        "parallelism": parallelism,
    }
    config.update(extra_config or {})
    config_path = root / "config.json"
    config_path.write_text(json.dumps(config, indent=2) + "\n", encoding="utf-8")
    return config_path


@pytest.fixture
def project(tmp_path):
    return write_project(tmp_path / "proj")


@pytest.fixture
def two_class_task(template, two_class_pool):
    """Cleanly separable planted task: diagonal affinity, distinct strengths."""
    classes = ["alpha", "beta"]
    train = make_dataset(classes, per_class=6)
    test = make_dataset(classes, per_class=3, start_id=100, text_prefix="query")
    strengths = {ex.id: 0.5 + 0.04 * (ex.id % 13) for ex in train}
    strengths.update({ex.id: 0.7 for ex in test})
    spec = SyntheticModelSpec(
        affinity={"alpha": {"alpha": 2.0, "beta": 0.0}, "beta": {"alpha": 0.0, "beta": 2.0}},
        word_bias={},
        sample_strength=strengths,
        noise_scale=0.0,
        seed=7,
    )
    backend = SyntheticBackend(spec, [train, test], two_class_pool, template)
    return {
        "classes": classes,
        "train": train,
        "test": test,
        "pool": two_class_pool,
        "template": template,
        "spec": spec,
        "backend": backend,
        "strengths": strengths,
    }
