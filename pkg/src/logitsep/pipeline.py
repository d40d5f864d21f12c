"""Pipeline configuration, stage execution, and run-directory artifacts.

Every run lives in a directory named by the config hash. Stages write JSON
artifacts as they finish, so a failed run keeps everything produced before
the failure and any stage can be re-run individually from the artifacts of
the previous ones.
"""

from __future__ import annotations

import json
import os
import platform
import time
from dataclasses import asdict, dataclass
from hashlib import sha256
from pathlib import Path

from . import __version__
from .backend import (
    ENDPOINT_ENV_VAR,
    CachedBackend,
    HttpBackend,
    LogitBackend,
    SyntheticBackend,
    SyntheticModelSpec,
)
from .corpus import (
    ClassWordPool,
    derive_dev,
    load_dataset,
    load_pool,
    load_template,
    offset_ids,
    save_pool,
)
from .errors import ConfigError, DataError, StageError
from .evaluator import (
    MODE_ANCHOR_WORDS,
    MODE_CLASS_NAMES,
    MODE_FULL_POOL,
    MODE_INSERTED_WORDS,
    PromptContext,
    evaluate,
    permutation_study,
)
from .labeler import (
    InsertionConfig,
    initial_word_update,
    load_sequences,
    run_insertion,
    save_sequences,
    sequences_to_words,
)
from .refiner import refine_pool, zero_shot_logit_matrix
from .sampler import (
    RANK_WEIGHTED,
    TOP_LOGIT_SUM,
    DemonstrationPlan,
    SampleScore,
    choose_scoring_method,
    misprediction_filter,
    score_samples,
    select_and_order,
)

MODE_ALIASES = {
    "cn": MODE_CLASS_NAMES,
    "anchors": MODE_ANCHOR_WORDS,
    "lw": MODE_INSERTED_WORDS,
    "pool": MODE_FULL_POOL,
}

ARTIFACTS = {
    "refinement_report": "refinement_report.json",
    "refined_pool": "refined_pool.json",
    "scores": "scores.json",
    "plan": "plan.json",
    "anchors": "anchors.json",
    "label_sequences": "label_sequences.json",
    "insertion_trace": "insertion_trace.json",
    "eval_report": "eval_report.json",
    "permutations": "permutations.json",
    "manifest": "manifest.json",
}

_CONFIG_KEYS = {
    "dataset", "test", "pool", "template", "synthetic", "endpoint",
    "scoring", "shots", "balanced", "mode", "lw_guided_insertion",
    "per_class_stopping", "max_rounds", "init_rank_over_all",
    "seed", "parallelism", "cache_dir", "cross_pool",
}


@dataclass
class PipelineConfig:
    dataset: str
    pool: str
    template: str
    test: str | None = None
    synthetic: str | None = None
    endpoint: str | None = None
    scoring: str = "auto"  # sum | rank | auto
    shots: int = 1
    balanced: bool = True
    mode: str = "cn"  # cn | anchors | lw | pool
    lw_guided_insertion: bool = False
    per_class_stopping: bool = False
    max_rounds: int = 8
    init_rank_over_all: bool = False
    seed: int = 0
    parallelism: int = 1
    cache_dir: str = "cache"
    cross_pool: str | None = None
    base_dir: str = "."  # directory that relative paths resolve against

    def validate(self) -> None:
        if self.shots < 1:
            raise ConfigError("shots must be >= 1")
        if self.parallelism < 1:
            raise ConfigError("parallelism must be >= 1")
        if self.max_rounds < 0:
            raise ConfigError("max_rounds must be >= 0")
        if (self.synthetic is None) == (self.endpoint is None):
            raise ConfigError("exactly one backend must be set: 'synthetic' or 'endpoint'")
        if self.scoring not in ("sum", "rank", "auto"):
            raise ConfigError(f"unknown scoring method {self.scoring!r}")
        if self.mode not in MODE_ALIASES and self.mode not in MODE_ALIASES.values():
            raise ConfigError(f"unknown prediction mode {self.mode!r}")

    @classmethod
    def from_file(cls, path: str | Path, **overrides) -> "PipelineConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc.msg})") from exc
        unknown = set(raw) - _CONFIG_KEYS
        if unknown:
            raise ConfigError(f"{path}: unknown config keys: {sorted(unknown)}")
        raw.update({k: v for k, v in overrides.items() if v is not None})
        if raw.get("synthetic") is None and raw.get("endpoint") is None:
            env_endpoint = os.environ.get(ENDPOINT_ENV_VAR)
            if env_endpoint:
                raw["endpoint"] = env_endpoint
        try:
            config = cls(base_dir=str(path.parent), **raw)
        except TypeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        config.validate()
        return config

    def resolve(self, p: str) -> Path:
        path = Path(p)
        return path if path.is_absolute() else Path(self.base_dir) / path

    def canonical(self) -> dict:
        payload = asdict(self)
        payload.pop("base_dir")
        return payload

    # Knobs that only steer evaluation or execution, not the organization
    # artifacts, stay out of the run-directory identity so stage commands
    # like `eval --mode pool` find the artifacts they consume.
    _NON_IDENTITY = ("mode", "seed", "parallelism", "cache_dir")

    def config_hash(self) -> str:
        payload = {k: v for k, v in self.canonical().items() if k not in self._NON_IDENTITY}
        blob = json.dumps(payload, sort_keys=True).encode("utf-8")
        return sha256(blob).hexdigest()[:12]

    def prediction_mode(self) -> str:
        return MODE_ALIASES.get(self.mode, self.mode)

    def insertion_config(self) -> InsertionConfig:
        return InsertionConfig(
            max_rounds=self.max_rounds,
            guide_mode="inserted" if self.lw_guided_insertion else "anchor",
            per_class_stopping=self.per_class_stopping,
            parallelism=self.parallelism,
        )


class Runtime:
    """Loaded inputs plus the cached backend for one run directory."""

    def __init__(self, config: PipelineConfig, runs_dir: str | Path = "runs"):
        config.validate()
        self.config = config
        self.runs_dir = Path(runs_dir)
        self.run_dir = self.runs_dir / config.config_hash()
        self.run_dir.mkdir(parents=True, exist_ok=True)

        self.train = load_dataset(config.resolve(config.dataset))
        # test ids continue after the train range so the splits stay disjoint
        # (per-sample knobs in a synthetic spec address these shifted ids)
        self.test = (
            offset_ids(load_dataset(config.resolve(config.test)), len(self.train))
            if config.test
            else None
        )
        self.pool = load_pool(config.resolve(config.pool))
        self.template = load_template(config.resolve(config.template))
        self._check_labels()
        self.backend = self._build_backend()

    def _check_labels(self) -> None:
        pool_classes = set(self.pool.classes)
        for name, dataset in (("train", self.train), ("test", self.test)):
            if dataset is None:
                continue
            extra = set(dataset.class_names) - pool_classes
            if extra:
                raise DataError(f"{name} dataset labels missing from pool: {sorted(extra)}")

    def _build_backend(self) -> CachedBackend:
        config = self.config
        if config.synthetic is not None:
            raw = json.loads(config.resolve(config.synthetic).read_text(encoding="utf-8"))
            spec = SyntheticModelSpec(
                affinity=raw["affinity"],
                word_bias=raw.get("word_bias", {}),
                sample_strength={int(k): float(v) for k, v in raw.get("sample_strength", {}).items()},
                noise_scale=float(raw.get("noise_scale", 0.0)),
                seed=int(raw.get("seed", 0)),
                default_strength=float(raw.get("default_strength", 1.0)),
            )
            datasets = [self.train] + ([self.test] if self.test else [])
            inner: LogitBackend = SyntheticBackend(
                spec,
                datasets,
                self.pool,
                self.template,
                sample_class_overrides={
                    int(k): v for k, v in raw.get("sample_class_overrides", {}).items()
                },
                word_class_overrides=raw.get("word_class_overrides", {}),
                max_prompt_chars=raw.get("max_prompt_chars"),
            )
        else:
            inner = HttpBackend(endpoint=config.endpoint)
        cache_dir = Path(config.cache_dir)
        if not cache_dir.is_absolute():
            cache_dir = self.runs_dir / cache_dir
        return CachedBackend(inner, cache_dir)

    # -- artifact helpers ---------------------------------------------------

    def artifact_path(self, name: str) -> Path:
        return self.run_dir / ARTIFACTS[name]

    def _load_artifact_json(self, name: str, producer: str):
        path = self.artifact_path(name)
        if not path.exists():
            raise DataError(f"missing artifact {path}; run the '{producer}' stage first")
        return json.loads(path.read_text(encoding="utf-8"))

    def load_refined_pool(self) -> ClassWordPool:
        self._load_artifact_json("refined_pool", "refine")
        return load_pool(self.artifact_path("refined_pool"), refined=True)

    def load_plan(self) -> DemonstrationPlan:
        return DemonstrationPlan.from_json_obj(self._load_artifact_json("plan", "select"))

    def load_scores(self) -> list[SampleScore]:
        rows = self._load_artifact_json("scores", "score")
        return [
            SampleScore(
                sample_id=row["sample_id"],
                label=row["class"],
                method=row["method"],
                value=row["score"],
                eligible=row["eligible"],
            )
            for row in rows
        ]

    def _write_json(self, name: str, obj) -> None:
        self.artifact_path(name).write_text(
            json.dumps(obj, indent=2, ensure_ascii=False) + "\n", encoding="utf-8"
        )


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------

def stage_refine(rt: Runtime) -> None:
    """Filter the word pool and write the refinement report and refined pool."""
    matrix = zero_shot_logit_matrix(
        rt.train, rt.pool, rt.template, rt.backend, rt.config.parallelism
    )
    refined, report = refine_pool(
        rt.train, rt.pool, rt.template, rt.backend, rt.config.parallelism, matrix=matrix
    )
    report.save(rt.artifact_path("refinement_report"))
    save_pool(refined, rt.artifact_path("refined_pool"))


def stage_score(rt: Runtime) -> None:
    """Filter mispredicted samples and score the rest over the refined pool."""
    refined = rt.load_refined_pool()
    matrix = zero_shot_logit_matrix(
        rt.train, refined, rt.template, rt.backend, rt.config.parallelism
    )
    eligibility = misprediction_filter(matrix, refined)
    if rt.config.scoring == "sum":
        method = TOP_LOGIT_SUM
    elif rt.config.scoring == "rank":
        method = RANK_WEIGHTED
    else:
        method = choose_scoring_method(matrix, refined, eligibility)
    scores = score_samples(matrix, refined, method, eligibility)
    rt._write_json(
        "scores",
        [
            {
                "sample_id": s.sample_id,
                "class": s.label,
                "method": s.method,
                "score": s.value,
                "eligible": s.eligible,
            }
            for s in scores
        ],
    )


def stage_select(rt: Runtime) -> None:
    """Pick and interleave the top-scoring samples into a demonstration plan."""
    refined = rt.load_refined_pool()
    scores = rt.load_scores()
    plan = select_and_order(scores, rt.config.shots, rt.config.balanced, refined.classes)
    plan.save(rt.artifact_path("plan"))


def _organization_plan(rt: Runtime, refined: ClassWordPool) -> DemonstrationPlan:
    """Plan used for anchor ranking and insertion demos.

    The unbalanced setting is an evaluation-time ablation: the evaluation
    demos drop the top-scoring pair (that is what plan.json holds), but label
    organization still needs every class represented, so it runs on the
    balanced counterpart rebuilt from the scores.
    """
    plan = rt.load_plan()
    if plan.balanced:
        return plan
    return select_and_order(rt.load_scores(), rt.config.shots, True, refined.classes)


def stage_init_labels(rt: Runtime) -> None:
    """Choose each class's anchor word from its refined pool."""
    refined = rt.load_refined_pool()
    plan = _organization_plan(rt, refined)
    anchors = initial_word_update(
        plan, rt.train, refined, rt.template, rt.backend,
        parallelism=rt.config.parallelism,
        rank_over_all_samples=rt.config.init_rank_over_all,
    )
    save_sequences(anchors, rt.artifact_path("anchors"))


def stage_insert(rt: Runtime) -> None:
    """Grow multi-word label sequences by greedy forward insertion."""
    if rt.config.cross_pool is not None:
        sequences = load_sequences(rt.config.resolve(rt.config.cross_pool))
        save_sequences(sequences, rt.artifact_path("label_sequences"))
        return
    refined = rt.load_refined_pool()
    plan = _organization_plan(rt, refined)
    anchors_path = rt.artifact_path("anchors")
    if not anchors_path.exists():
        raise DataError(f"missing artifact {anchors_path}; run the 'init-labels' stage first")
    anchors = load_sequences(anchors_path)
    dev = derive_dev(rt.train, plan.sample_ids())
    sequences, trace = run_insertion(
        anchors, plan, rt.train, dev, refined, rt.template, rt.backend,
        config=rt.config.insertion_config(),
    )
    save_sequences(sequences, rt.artifact_path("label_sequences"))
    trace.save(rt.artifact_path("insertion_trace"))


def _eval_context(rt: Runtime) -> tuple[PromptContext, str]:
    refined = rt.load_refined_pool()
    plan = rt.load_plan()
    sequences_path = rt.artifact_path("label_sequences")
    if not sequences_path.exists():
        raise DataError(f"missing artifact {sequences_path}; run the 'insert' stage first")
    sequences = load_sequences(sequences_path)
    context = PromptContext.build(
        template=rt.template,
        plan=plan,
        train=rt.train,
        sequences=sequences_to_words(sequences),
        pool=refined,
        class_names=rt.train.class_names,
    )
    return context, rt.config.prediction_mode()


def stage_eval(rt: Runtime, logits_csv: str | Path | None = None) -> None:
    if rt.test is None:
        raise ConfigError("config has no 'test' dataset for evaluation")
    context, mode = _eval_context(rt)
    report = evaluate(
        rt.test, context, mode, rt.backend,
        parallelism=rt.config.parallelism, logits_csv=logits_csv,
    )
    report.save(rt.artifact_path("eval_report"))


def stage_permute(rt: Runtime, n_perms: int, seed: int | None = None) -> None:
    if rt.test is None:
        raise ConfigError("config has no 'test' dataset for the permutation study")
    context, mode = _eval_context(rt)
    plan = rt.load_plan()
    study = permutation_study(
        plan, n_perms, rt.config.seed if seed is None else seed,
        rt.test, context, mode, rt.backend, rt.config.parallelism,
    )
    study.save(rt.artifact_path("permutations"))


PIPELINE_STAGES = [
    ("refine", stage_refine),
    ("score", stage_score),
    ("select", stage_select),
    ("init-labels", stage_init_labels),
    ("insert", stage_insert),
    ("eval", stage_eval),
]


def run_pipeline(config: PipelineConfig, runs_dir: str | Path = "runs") -> Path:
    """Execute every stage in order and write the manifest.

    A stage failure halts the run but keeps the artifacts of completed
    stages in place.
    """
    try:
        rt = Runtime(config, runs_dir)
    except Exception as exc:
        raise StageError("load", exc) from exc
    for name, fn in PIPELINE_STAGES:
        if config.cross_pool is not None and name == "init-labels":
            continue
        try:
            fn(rt)
        except Exception as exc:
            raise StageError(name, exc) from exc
    write_manifest(rt)
    return rt.run_dir


def write_manifest(rt: Runtime) -> None:
    manifest = {
        "config": rt.config.canonical(),
        "config_hash": rt.config.config_hash(),
        "artifacts": sorted(
            p.name for p in rt.run_dir.iterdir() if p.suffix == ".json" and p.name != "manifest.json"
        ),
        "cache": rt.backend.stats(),
        "versions": {
            "python": platform.python_version(),
            "logitsep": __version__,
        },
        "created_at": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    }
    rt._write_json("manifest", manifest)
