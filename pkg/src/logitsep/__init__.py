"""Logit-separability toolkit for organizing in-context learning demonstrations.

The pipeline refines a pool of class-related words against a logit backend,
scores and orders demonstration samples by how cleanly their logits separate
classes, and grows multi-word label strings by greedy forward insertion.
"""

__version__ = "0.1.0"

from .corpus import (
    ClassWordPool,
    DatasetSplit,
    LabeledDataset,
    LabeledExample,
    PromptTemplate,
    class_word,
    derive_dev,
    load_dataset,
    load_pool,
    load_template,
    render_prompt,
)
from .backend import (
    CachedBackend,
    HttpBackend,
    LogitQuery,
    SyntheticBackend,
    SyntheticModelSpec,
    batch_query,
    synthetic_logit,
)
from .refiner import BiserialStats, point_biserial, refine_pool, zero_shot_logit_matrix
from .sampler import (
    DemonstrationPlan,
    SampleScore,
    misprediction_filter,
    score_samples,
    select_and_order,
)
from .labeler import InsertionConfig, LabelSequence, initial_word_update, run_insertion
from .evaluator import EvalReport, PromptContext, evaluate, permutation_study, predict
from .pipeline import PipelineConfig, Runtime, run_pipeline

__all__ = [
    "BiserialStats",
    "CachedBackend",
    "ClassWordPool",
    "DatasetSplit",
    "DemonstrationPlan",
    "EvalReport",
    "HttpBackend",
    "InsertionConfig",
    "LabelSequence",
    "LabeledDataset",
    "LabeledExample",
    "LogitQuery",
    "PipelineConfig",
    "PromptContext",
    "PromptTemplate",
    "Runtime",
    "SampleScore",
    "SyntheticBackend",
    "SyntheticModelSpec",
    "batch_query",
    "class_word",
    "derive_dev",
    "evaluate",
    "initial_word_update",
    "load_dataset",
    "load_pool",
    "load_template",
    "misprediction_filter",
    "permutation_study",
    "point_biserial",
    "predict",
    "refine_pool",
    "render_prompt",
    "run_insertion",
    "run_pipeline",
    "score_samples",
    "select_and_order",
    "synthetic_logit",
    "zero_shot_logit_matrix",
]
