"""Command-line entry points.

Every subcommand reads the same JSON config layout as the experiment driver;
commands that need only part of it (the model weights, say) pull their
section and ignore the rest.  Results go to stdout as JSON unless an output
path is given.
"""

from __future__ import annotations

import json

import click
import numpy as np

from .data import DatasetError, build_gram_pair, default_kernel_pair, load_dataset
from .harness import (
    ExperimentConfig,
    HarnessError,
    export_results,
    load_experiment_config,
    run_active_loop,
    run_baseline,
)
from .oracle import EnumerationBudget, EnumerationError, ral_exact
from .ral import ConfigError
from .scmodel import score_complexity, solve_sc_relaxation
from .solver import SolverError

__all__ = ["main"]


def _load_config(path: str | None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    return load_experiment_config(path)


def _emit(payload: dict, out: str | None) -> None:
    text = json.dumps(payload, indent=2)
    if out is None:
        click.echo(text)
    else:
        with open(out, "w") as fh:
            fh.write(text + "\n")


def _fail(exc: Exception) -> None:
    raise click.ClickException(f"{type(exc).__name__}: {exc}")


@click.group()
def main() -> None:
    """Robust active learning toolkit."""


@main.command()
@click.argument("data_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--config", "config_path", type=click.Path(exists=True), help="experiment JSON")
@click.option("--out", type=click.Path(), help="write the summary here instead of stdout")
def fit(data_path: str, config_path: str | None, out: str | None) -> None:
    """Fit the simple-complex pair on a fully labeled dataset."""
    try:
        cfg = _load_config(config_path)
        data = load_dataset(data_path)
        gram = build_gram_pair(data, *default_kernel_pair(data))
        solution, model = solve_sc_relaxation(
            data, gram, cfg.ral.lam, cfg.ral.lam_o, cfg.ral.n_o
        )
    except (HarnessError, DatasetError, SolverError, ValueError) as exc:
        _fail(exc)
    f = gram.K @ model.simple_coef
    pred = np.where(f >= 0.0, 1, -1)
    _emit(
        {
            "objective": float(solution.objective),
            "p": model.p.tolist(),
            "noisy": [int(i) for i in np.flatnonzero(model.p >= 0.5)],
            "alpha": model.alpha.tolist(),
            "beta": model.beta.tolist(),
            "train_accuracy": float(np.mean(pred == data.labels)),
        },
        out,
    )


@main.command("score-complexity")
@click.argument("data_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--config", "config_path", type=click.Path(exists=True), help="experiment JSON")
@click.option("--epsilon", type=float, default=None, help="RKHS drift tolerance")
@click.option("--probes", type=int, default=16, show_default=True)
@click.option("--out", type=click.Path())
def score_complexity_cmd(
    data_path: str, config_path: str | None, epsilon: float | None, probes: int, out: str | None
) -> None:
    """Per-instance complexity scores (highest first in the ranking)."""
    try:
        cfg = _load_config(config_path)
        data = load_dataset(data_path)
        gram = build_gram_pair(data, *default_kernel_pair(data))
        report = score_complexity(data, gram, epsilon=epsilon, probes=probes, lam=cfg.ral.lam)
    except (HarnessError, DatasetError, ValueError) as exc:
        _fail(exc)
    _emit(report.to_dict(), out)


@main.command("active-run")
@click.option("--config", "config_path", type=click.Path(exists=True), required=True)
@click.option("--out", type=click.Path(), required=True)
@click.option("--seed", type=int, default=None, help="override the first configured seed")
@click.option(
    "--strategy",
    type=click.Choice(["ral", "random", "margin", "ral-lite"]),
    default="ral",
    show_default=True,
)
@click.option("--format", "fmt", type=click.Choice(["csv", "json"]), default="csv", show_default=True)
def active_run(
    config_path: str, out: str, seed: int | None, strategy: str, fmt: str
) -> None:
    """Run the querying loop (or a baseline) and export per-round metrics."""
    try:
        cfg = load_experiment_config(config_path)
        if strategy == "ral":
            metrics, _ = run_active_loop(cfg, seed=seed)
        else:
            metrics = run_baseline(cfg, strategy, seed=seed)
        export_results(metrics, out, format=fmt)
    except (HarnessError, SolverError, ConfigError, DatasetError) as exc:
        _fail(exc)
    click.echo(f"{len(metrics)} rounds -> {out}")


@main.command()
@click.argument("data_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--config", "config_path", type=click.Path(exists=True), help="experiment JSON")
@click.option("--max-states", type=int, default=2_000_000, show_default=True)
@click.option("--out", type=click.Path())
def oracle(data_path: str, config_path: str | None, max_states: int, out: str | None) -> None:
    """Exact minimax query selection by enumeration (tiny instances only)."""
    try:
        cfg = _load_config(config_path)
        data = load_dataset(data_path)
        gram = build_gram_pair(data, *default_kernel_pair(data))
        budget = EnumerationBudget(max_states=max_states)
        result = ral_exact(data, gram, cfg.ral, budget)
    except (HarnessError, DatasetError, EnumerationError, ConfigError, ValueError) as exc:
        _fail(exc)
    _emit(
        {
            "query": [int(i) for i in result.query],
            "value": result.value,
            "y_full": result.y_full.tolist(),
            "p": result.p.tolist(),
            "states": result.states,
            "per_query": {
                ",".join(str(i) for i in k): v for k, v in sorted(result.per_query_value.items())
            },
        },
        out,
    )


@main.command()
@click.option("--port", type=int, default=8000, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option(
    "--data-dir",
    type=click.Path(file_okay=False),
    default="./ral-sessions",
    show_default=True,
    help="directory for per-session event logs",
)
def serve(port: int, host: str, data_dir: str) -> None:
    """Start the labeling service."""
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(data_dir=data_dir), host=host, port=port)


if __name__ == "__main__":
    main(prog_name="ral")
