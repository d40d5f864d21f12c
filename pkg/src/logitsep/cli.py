"""Command-line entry points for the full pipeline and its individual stages."""

from __future__ import annotations

import sys
from pathlib import Path

import click

from .errors import BackendError, ConfigError, DataError, StageError
from .pipeline import (
    PipelineConfig,
    Runtime,
    run_pipeline,
    stage_eval,
    stage_init_labels,
    stage_insert,
    stage_permute,
    stage_refine,
    stage_score,
    stage_select,
    write_manifest,
)

EXIT_CONFIG_ERROR = 2
EXIT_BACKEND_ERROR = 3
EXIT_DATA_ERROR = 4


def _exit_code(exc: Exception) -> int:
    if isinstance(exc, StageError):
        return _exit_code(exc.cause) if isinstance(exc.cause, Exception) else 1
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG_ERROR
    if isinstance(exc, BackendError):
        return EXIT_BACKEND_ERROR
    if isinstance(exc, DataError):
        return EXIT_DATA_ERROR
    return 1


def _fail(exc: Exception) -> None:
    if isinstance(exc, StageError):
        click.echo(f"error in stage '{exc.stage}': {exc.cause}", err=True)
    else:
        click.echo(f"error: {exc}", err=True)
    sys.exit(_exit_code(exc))


_common_options = [
    click.option("--config", "-c", "config_path", required=True, type=click.Path(), help="Pipeline config JSON."),
    click.option("--runs-dir", default="runs", show_default=True, help="Directory holding run outputs."),
    click.option("--scoring", type=click.Choice(["sum", "rank", "auto"]), default=None, help="Sample scoring rule."),
    click.option("--shots", "-k", type=int, default=None, help="Demonstrations per class."),
    click.option("--unbalanced", is_flag=True, default=False, help="Drop the single highest-scoring pair from the plan."),
    click.option("--mode", type=click.Choice(["cn", "anchors", "lw", "pool"]), default=None, help="Prediction candidate set."),
    click.option("--lw-insertion", is_flag=True, default=False, help="Guide insertion stopping by inserted-word predictions."),
    click.option("--per-class-stopping", is_flag=True, default=False, help="Let each class stop inserting independently."),
    click.option("--init-rank-over-all", is_flag=True, default=False, help="Rank anchor candidates over all plan samples, not just own-class ones."),
    click.option("--max-rounds", type=int, default=None, help="Maximum insertion rounds."),
    click.option("--seed", type=int, default=None, help="Random seed for seeded operations."),
    click.option("--parallelism", type=int, default=None, help="Concurrent backend requests."),
    click.option("--cache-dir", default=None, help="Logit cache directory (relative to runs dir)."),
    click.option("--endpoint", default=None, help="HTTP backend endpoint (overrides config and environment)."),
    click.option("--cross-pool", default=None, type=click.Path(), help="Use label sequences trained on another dataset."),
]


def common_options(fn):
    for option in reversed(_common_options):
        fn = option(fn)
    return fn


def _load_config(config_path: str, **flags) -> PipelineConfig:
    overrides = {
        "scoring": flags.get("scoring"),
        "shots": flags.get("shots"),
        "mode": flags.get("mode"),
        "max_rounds": flags.get("max_rounds"),
        "seed": flags.get("seed"),
        "parallelism": flags.get("parallelism"),
        "cache_dir": flags.get("cache_dir"),
        "endpoint": flags.get("endpoint"),
        "cross_pool": flags.get("cross_pool"),
    }
    if flags.get("unbalanced"):
        overrides["balanced"] = False
    if flags.get("lw_insertion"):
        overrides["lw_guided_insertion"] = True
    if flags.get("per_class_stopping"):
        overrides["per_class_stopping"] = True
    if flags.get("init_rank_over_all"):
        overrides["init_rank_over_all"] = True
    return PipelineConfig.from_file(config_path, **overrides)


def _runtime(config_path: str, runs_dir: str, **flags) -> Runtime:
    config = _load_config(config_path, **flags)
    return Runtime(config, runs_dir)


@click.group()
def main():
    """Organize in-context learning demonstrations by logit separability."""


@main.command()
@common_options
def run(config_path, runs_dir, **flags):
    """Run every stage and write all artifacts into the run directory."""
    try:
        config = _load_config(config_path, **flags)
        run_dir = run_pipeline(config, runs_dir)
    except Exception as exc:
        _fail(exc)
    click.echo(f"run complete: {run_dir}")


def _stage_command(name, stage_fn):
    @main.command(name=name, help=stage_fn.__doc__)
    @common_options
    def cmd(config_path, runs_dir, **flags):
        try:
            rt = _runtime(config_path, runs_dir, **flags)
            stage_fn(rt)
            write_manifest(rt)
        except Exception as exc:
            _fail(StageError(name, exc) if not isinstance(exc, StageError) else exc)
        click.echo(f"stage '{name}' complete: {rt.run_dir}")

    return cmd


_stage_command("refine", stage_refine)
_stage_command("score", stage_score)
_stage_command("select", stage_select)
_stage_command("init-labels", stage_init_labels)
_stage_command("insert", stage_insert)


@main.command(name="eval")
@common_options
@click.option("--logits-csv", default=None, type=click.Path(), help="Also write per-candidate logits as CSV.")
def eval_cmd(config_path, runs_dir, logits_csv, **flags):
    """Evaluate test accuracy under the configured prediction mode."""
    try:
        rt = _runtime(config_path, runs_dir, **flags)
        stage_eval(rt, logits_csv=logits_csv)
        write_manifest(rt)
    except Exception as exc:
        _fail(StageError("eval", exc) if not isinstance(exc, StageError) else exc)
    click.echo(f"stage 'eval' complete: {rt.run_dir}")


@main.command()
@common_options
@click.option("--n", "n_perms", type=int, default=30, show_default=True, help="Alternative orderings to evaluate.")
def permute(config_path, runs_dir, n_perms, **flags):
    """Evaluate random demonstration orderings against the plan's order."""
    try:
        rt = _runtime(config_path, runs_dir, **flags)
        stage_permute(rt, n_perms, seed=flags.get("seed"))
        write_manifest(rt)
    except Exception as exc:
        _fail(StageError("permute", exc) if not isinstance(exc, StageError) else exc)
    click.echo(f"stage 'permute' complete: {rt.run_dir}")


if __name__ == "__main__":
    main()
