# Copyright 2021, Milan Meulemans.
#
# This file is part of rtbconfig.
#
# rtbconfig is free software: you can redistribute it and/or modify
# it under the terms of the GNU Lesser General Public License as published by
# the Free Software Foundation, either version 3 of the License, or
# (at your option) any later version.
#
# rtbconfig is distributed in the hope that it will be useful,
# but WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
# GNU Lesser General Public License for more details.
#
# You should have received a copy of the GNU Lesser General Public License
# along with rtbconfig.  If not, see <https://www.gnu.org/licenses/>.

"""The ``rtbconfig`` command line."""
from __future__ import annotations

import asyncio
import json
import logging
import sys
from collections.abc import Callable, Mapping, Sequence
from pathlib import Path
from typing import Any

import click
import yaml

from . import __version__
from .cvr_model import CvrModel, load_model, predict_all, save_model, train
from .dataset import (
    N_ATTRIBUTES,
    CampaignDataset,
    load_log,
    make_campaign_slices,
    sample_rows,
    save_log,
    slice_report,
    split_train_test,
)
from .exceptions import (
    CheckpointError,
    DataError,
    InvalidArgument,
    SchemaError,
    SpecificationError,
    Unavailable,
)
from .fetch import fetch_log
from .manifest import RunManifest, manifest_path
from .metrics import evaluate_model
from .scoring import average_profitability, score_dataset
from .search import SearchParams, SearchStats, count_configurations, search, write_ranked
from .strategies import (
    DEFAULT_FRACTIONS,
    DEFAULT_SLICE_SIZES,
    EXPERIMENT_IDS,
    THRESHOLD_KEEP,
    ExperimentSpec,
    arun_experiment,
)
from .synthetic import generate_synthetic, load_planted_segments, SyntheticSpec

_LOGGER = logging.getLogger(__name__)

EXIT_USAGE = 2
EXIT_DATA = 3
ARGV_KEY = "rtbconfig.argv"


class CommandFailed(click.ClickException):
    """A library error mapped to a process exit code."""

    def __init__(self, message: str, exit_code: int) -> None:
        """Initialize with the exit code to use."""
        super().__init__(message)
        self.exit_code = exit_code


class RtbConfigGroup(click.Group):
    """Command group that records argv and maps library errors to exit codes."""

    def parse_args(self, ctx: click.Context, args: list[str]) -> list[str]:
        """Keep the raw arguments for the run manifest."""
        ctx.meta[ARGV_KEY] = list(args)
        return super().parse_args(ctx, args)

    def invoke(self, ctx: click.Context) -> Any:
        """Run the subcommand, translating library errors."""
        try:
            return super().invoke(ctx)
        except (SchemaError, SpecificationError, InvalidArgument) as err:
            raise CommandFailed(str(err), EXIT_USAGE) from err
        except (DataError, CheckpointError, Unavailable) as err:
            raise CommandFailed(str(err) or type(err).__name__, EXIT_DATA) from err


def _load_config(ctx: click.Context, param: click.Parameter, value: str | None) -> str | None:
    """Turn a flat YAML file into the command's defaults; explicit flags still win."""
    if value is None:
        return None
    try:
        with open(value, "r", encoding="utf-8") as handle:
            document = yaml.safe_load(handle) or {}
    except (OSError, yaml.YAMLError) as err:
        raise click.BadParameter(str(err), ctx=ctx, param=param) from err
    if not isinstance(document, Mapping):
        raise click.BadParameter("expected a mapping of flag names to values", ctx=ctx, param=param)
    names: dict[str, str] = {}
    for option in ctx.command.params:
        names[option.name] = option.name
        for flag in option.opts:
            names[flag.lstrip("-").replace("-", "_")] = option.name
    defaults: dict[str, Any] = {}
    for key, item in document.items():
        name = names.get(str(key).replace("-", "_"))
        if name is None or name == "config":
            raise click.BadParameter(f"unknown key {key!r}", ctx=ctx, param=param)
        defaults[name] = ",".join(map(str, item)) if isinstance(item, list) else item
    ctx.default_map = {**(ctx.default_map or {}), **defaults}
    return value


def config_option(func: Callable) -> Callable:
    """Add ``--config FILE`` to a command."""
    return click.option(
        "--config",
        type=click.Path(exists=True, dir_okay=False),
        is_eager=True,
        expose_value=False,
        callback=_load_config,
        help="YAML file of flag defaults.",
    )(func)


def force_option(func: Callable) -> Callable:
    """Add ``--force`` to a command."""
    return click.option("--force", is_flag=True, help="Overwrite existing outputs.")(func)


def _list_of(kind: Callable[[str], Any]) -> Callable:
    def _parse(ctx: click.Context, param: click.Parameter, value: Any) -> tuple[Any, ...] | None:
        if value is None or isinstance(value, tuple):
            return value
        try:
            return tuple(kind(part.strip()) for part in str(value).split(",") if part.strip())
        except ValueError as err:
            raise click.BadParameter(str(err), ctx=ctx, param=param) from err

    return _parse


def _check_output(path: Path, force: bool) -> None:
    if path.exists() and not force:
        raise CommandFailed(f"{path} exists; use --force to overwrite", EXIT_USAGE)


def _plain(value: Any) -> Any:
    """Return ``value`` with paths as strings and tuples as lists, for JSON."""
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, (tuple, list)):
        return [_plain(item) for item in value]
    return value


def _attributes(ctx: click.Context) -> int:
    return ctx.find_root().params.get("attributes", N_ATTRIBUTES)


def _load(ctx: click.Context, path: Path) -> CampaignDataset:
    return load_log(path, n_attributes=_attributes(ctx))


def _start(ctx: click.Context, seed: int | None = None) -> RunManifest:
    config = {key: _plain(value) for key, value in ctx.params.items()}
    config["attributes"] = _attributes(ctx)
    return RunManifest(
        argv=list(ctx.meta.get(ARGV_KEY, [])),
        command=ctx.info_name or "",
        config=config,
        seed=seed,
        code_version=__version__,
    )


def _finish(manifest: RunManifest, inputs: Sequence[Path], outputs: Sequence[Path], where: Path) -> None:
    manifest.record_inputs(inputs)
    manifest.record_outputs(outputs)
    manifest.write(manifest_path(where))


def _load_scored(ctx: click.Context, path: Path) -> CampaignDataset:
    d = _load(ctx, path)
    if d.profitability is None:
        if d.cvr is None:
            raise InvalidArgument(f"{path} has neither cvr nor profitability; run predict first")
        d = score_dataset(d)
    return d


@click.group(cls=RtbConfigGroup)
@click.option("-v", "--verbose", is_flag=True, help="Log debug detail.")
@click.option("-q", "--quiet", is_flag=True, help="Only log warnings and errors.")
@click.option(
    "--attributes",
    type=click.IntRange(min=1),
    default=N_ATTRIBUTES,
    show_default=True,
    help="Categorical columns cat1..catN every log carries.",
)
@click.version_option(__version__, prog_name="rtbconfig")
def main(verbose: bool, quiet: bool, attributes: int) -> None:
    """Campaign configuration search over attribution logs."""
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(level=level, stream=sys.stderr, format="%(asctime)s %(levelname)s %(name)s: %(message)s")


@main.command()
@config_option
@click.option("--rows", type=int, default=100_000, show_default=True)
@click.option("--cardinality", callback=_list_of(int), default="10", show_default=True, help="One value or a comma list.")
@click.option("--planted", type=click.Path(exists=True, dir_okay=False, path_type=Path), help="YAML plan of planted segments.")
@click.option("--background-rate", type=float, default=0.02, show_default=True)
@click.option("--background-cost-shape", type=float, default=2.0, show_default=True)
@click.option("--background-cost-scale", type=float, default=1.0, show_default=True)
@click.option("--click-rate", type=float, default=0.0, show_default=True)
@click.option("--campaign", type=int, default=0, show_default=True)
@click.option("--fill-cvr", is_flag=True, help="Fill cvr with the generating rate and compute profitability.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("-o", "--output", type=click.Path(dir_okay=False, path_type=Path), required=True)
@force_option
@click.pass_context
def gen(
    ctx: click.Context,
    rows: int,
    cardinality: tuple[int, ...],
    planted: Path | None,
    background_rate: float,
    background_cost_shape: float,
    background_cost_scale: float,
    click_rate: float,
    campaign: int,
    fill_cvr: bool,
    seed: int,
    output: Path,
    force: bool,
) -> None:
    """Generate a synthetic campaign log."""
    _check_output(output, force)
    manifest = _start(ctx, seed)
    spec = SyntheticSpec(
        n_rows=rows,
        n_attributes=_attributes(ctx),
        cardinality=cardinality[0] if len(cardinality) == 1 else cardinality,
        segments=tuple(load_planted_segments(planted)) if planted else (),
        background_rate=background_rate,
        background_cost_shape=background_cost_shape,
        background_cost_scale=background_cost_scale,
        click_rate=click_rate,
        campaign_id=campaign,
        seed=seed,
        fill_cvr=fill_cvr,
    )
    save_log(generate_synthetic(spec), output)
    _finish(manifest, [planted] if planted else [], [output], output)


@main.command()
@config_option
@click.argument("url")
@click.option("-o", "--output", type=click.Path(dir_okay=False, path_type=Path), required=True)
@click.option("--retries", type=int, default=3, show_default=True)
@force_option
@click.pass_context
def fetch(ctx: click.Context, url: str, output: Path, retries: int, force: bool) -> None:
    """Download an attribution log from URL."""
    _check_output(output, force)
    manifest = _start(ctx)
    result = asyncio.run(fetch_log(url, output, retries))
    click.echo(f"{result.path}\t{result.bytes}\t{result.sha256}")
    _finish(manifest, [], [output], output)


@main.command()
@config_option
@click.argument("log", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--train-rows", type=int, required=True, help="Rows (in time order) that go to the training set.")
@click.option("--train-output", type=click.Path(dir_okay=False, path_type=Path), required=True)
@click.option("--test-output", type=click.Path(dir_okay=False, path_type=Path), required=True)
@click.option("--sample", type=click.IntRange(min=1), help="Keep a uniform random N rows (in time order) before splitting.")
@click.option("--seed", type=int, default=0, show_default=True, help="Seed for --sample.")
@force_option
@click.pass_context
def split(
    ctx: click.Context,
    log: Path,
    train_rows: int,
    train_output: Path,
    test_output: Path,
    sample: int | None,
    seed: int,
    force: bool,
) -> None:
    """Split a log into time-ordered training and test sets."""
    _check_output(train_output, force)
    _check_output(test_output, force)
    manifest = _start(ctx, seed if sample else None)
    data = _load(ctx, log)
    if sample is not None:
        data = sample_rows(data, sample, seed)
        _LOGGER.info("kept a sample of %d rows from %s", len(data), log)
    train_set, test_set = split_train_test(data, train_rows)
    save_log(train_set, train_output)
    save_log(test_set, test_output)
    _finish(manifest, [log], [train_output, test_output], train_output)


@main.command("train")
@config_option
@click.argument("log", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("-o", "--output", type=click.Path(dir_okay=False, path_type=Path), required=True, help="Model checkpoint.")
@click.option("--hash-size", type=int, default=2 ** 20, show_default=True, help="D, a power of two.")
@click.option("--alpha", type=float, default=0.1, show_default=True)
@click.option("--salted", is_flag=True, help="Hash (position, value) pairs instead of raw values.")
@click.option("--train-rows", type=int, help="Train on the first N rows only.")
@click.option("--window", type=int, default=100_000, show_default=True, help="Rows per reported log-loss window.")
@click.option("--resume", type=click.Path(exists=True, dir_okay=False, path_type=Path), help="Continue from a checkpoint.")
@force_option
@click.pass_context
def train_command(
    ctx: click.Context,
    log: Path,
    output: Path,
    hash_size: int,
    alpha: float,
    salted: bool,
    train_rows: int | None,
    window: int,
    resume: Path | None,
    force: bool,
) -> None:
    """Train the conversion model on a log in one pass."""
    _check_output(output, force)
    manifest = _start(ctx)
    data = _load(ctx, log)
    if train_rows is not None:
        data = data.head(train_rows)
    model = load_model(resume) if resume else CvrModel(D=hash_size, alpha=alpha, salted=salted)
    result = train(model, data, window=window)
    save_model(result.model, output)
    if result.window_losses:
        _LOGGER.info("final window log loss %.5f", result.window_losses[-1])
    _finish(manifest, [log] + ([resume] if resume else []), [output], output)


@main.command()
@config_option
@click.argument("log", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("-m", "--model", type=click.Path(exists=True, dir_okay=False, path_type=Path), required=True)
@click.option("-o", "--output", type=click.Path(dir_okay=False, path_type=Path), required=True)
@force_option
@click.pass_context
def predict(ctx: click.Context, log: Path, model: Path, output: Path, force: bool) -> None:
    """Append cvr and profitability columns to a log."""
    _check_output(output, force)
    manifest = _start(ctx)
    scored = score_dataset(predict_all(load_model(model), _load(ctx, log)))
    save_log(scored, output)
    _finish(manifest, [log, model], [output], output)


@main.command()
@config_option
@click.argument("log", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("-m", "--model", type=click.Path(exists=True, dir_okay=False, path_type=Path), required=True)
@click.option("-o", "--output", type=click.Path(dir_okay=False, path_type=Path), required=True, help="Metrics JSON.")
@click.option("--threshold", type=float, default=0.5, show_default=True)
@click.option("--skip-rows", type=int, default=0, show_default=True, help="Evaluate only rows after the first N.")
@force_option
@click.pass_context
def evaluate(ctx: click.Context, log: Path, model: Path, output: Path, threshold: float, skip_rows: int, force: bool) -> None:
    """Evaluate a model checkpoint against the conversion labels of a log."""
    _check_output(output, force)
    manifest = _start(ctx)
    data = _load(ctx, log)
    if skip_rows:
        data = data.take(slice(skip_rows, None))
    metrics = evaluate_model(load_model(model), data, threshold)
    with open(output, "w", encoding="utf-8", newline="\n") as handle:
        json.dump(metrics.to_dict(), handle, indent=2, sort_keys=True)
        handle.write("\n")
    _finish(manifest, [log, model], [output], output)


@main.command()
@config_option
@click.argument("log", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--slice-size", type=int, default=100_000, show_default=True)
@click.option("-o", "--output-dir", type=click.Path(file_okay=False, path_type=Path), required=True)
@force_option
@click.pass_context
def slices(ctx: click.Context, log: Path, slice_size: int, output_dir: Path, force: bool) -> None:
    """Cut single-campaign slices out of a scored log."""
    _check_output(output_dir, force)
    manifest = _start(ctx)
    data = _load(ctx, log)
    report = slice_report(data, slice_size)
    output_dir.mkdir(parents=True, exist_ok=True)
    outputs: list[Path] = []
    entries: list[dict[str, Any]] = []
    for part in make_campaign_slices(data, slice_size):
        outputs.append(save_log(part, output_dir / f"slice-{part.name}.csv"))
        entries.append(
            {
                "file": outputs[-1].name,
                "campaign": part.campaign_id,
                "rows": len(part),
                "configurations": count_configurations(part),
                "avg_profitability": average_profitability(part)[0] if part.profitability is not None else None,
            }
        )
    summary = output_dir / "slices.json"
    with open(summary, "w", encoding="utf-8", newline="\n") as handle:
        json.dump(
            {
                "slice_size": slice_size,
                "slices": entries,
                "campaigns": [{"campaign": c, "slices": n} for c, n in report.emitted],
                "skipped_campaigns": report.skipped,
            },
            handle,
            indent=2,
            sort_keys=True,
        )
        handle.write("\n")
    click.echo(f"{report.n_slices} slices, {report.skipped} campaigns skipped")
    _finish(manifest, [log], outputs + [summary], output_dir)


@main.command("search")
@config_option
@click.argument("log", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--limit", type=int, default=5_000, show_default=True, help="Required number of visits.")
@click.option("--allow-below-limit", is_flag=True, help="Score configurations below the limit too.")
@click.option("--max-subset-size", type=int, help="Largest attribute subset to search.")
@click.option("--top", type=int, help="Keep only the best N configurations.")
@click.option("--no-prune", is_flag=True, help="Evaluate every subset (same results, slower).")
@click.option("--workers", type=int, default=1, show_default=True)
@click.option("--format", "fmt", type=click.Choice(["csv", "tsv", "json"]), help="Defaults to the output suffix.")
@click.option("--timings", is_flag=True, help="Include elapsed seconds (makes output non-reproducible).")
@click.option("-o", "--output", type=click.Path(dir_okay=False, path_type=Path), required=True)
@force_option
@click.pass_context
def search_command(
    ctx: click.Context,
    log: Path,
    limit: int,
    allow_below_limit: bool,
    max_subset_size: int | None,
    top: int | None,
    no_prune: bool,
    workers: int,
    fmt: str | None,
    timings: bool,
    output: Path,
    force: bool,
) -> None:
    """Rank the attribute configurations of a scored slice."""
    _check_output(output, force)
    manifest = _start(ctx)
    params = SearchParams(
        limit=limit,
        allow_below_limit=allow_below_limit,
        max_subset_size=max_subset_size,
        prune=not no_prune,
        top=top,
    )
    stats = SearchStats()
    results = search(_load_scored(ctx, log), params, workers=workers, stats=stats)
    if fmt is None:
        fmt = {".json": "json", ".tsv": "tsv"}.get(output.suffix, "csv")
    write_ranked(results, output, fmt, include_timings=timings)
    if not results:
        click.echo(f"warning: no configuration matches at least {limit} rows", err=True)
    _LOGGER.info(
        "%d configurations ranked (%d subsets evaluated, %d skipped)",
        len(results),
        stats.subsets_evaluated,
        stats.subsets_skipped,
    )
    _finish(manifest, [log], [output], output)


@main.command()
@config_option
@click.option("--id", "-e", "experiment_id", type=click.Choice(EXPERIMENT_IDS, case_sensitive=False), required=True)
@click.argument("logs", nargs=-1, required=True, type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--slice-size", type=int, help="Cut each input into campaign slices of this size first.")
@click.option("--limits", callback=_list_of(int), help="Comma list; defaults to the experiment's grid.")
@click.option("--slice-sizes", callback=_list_of(int), default=",".join(map(str, DEFAULT_SLICE_SIZES)), show_default=True)
@click.option("--fractions", callback=_list_of(float), default=",".join(map(str, DEFAULT_FRACTIONS)), show_default=True)
@click.option("--threshold-kinds", callback=_list_of(str), default="cost,profitability", show_default=True)
@click.option("--threshold-keep", type=click.Choice(THRESHOLD_KEEP), default="favourable", show_default=True)
@click.option("--max-subset-size", type=int)
@click.option("--workers", type=int, default=1, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--timings", is_flag=True, help="Include elapsed seconds (makes output non-reproducible).")
@click.option("-o", "--output-dir", type=click.Path(file_okay=False, path_type=Path), required=True)
@force_option
@click.pass_context
def experiment(
    ctx: click.Context,
    experiment_id: str,
    logs: tuple[Path, ...],
    slice_size: int | None,
    limits: tuple[int, ...] | None,
    slice_sizes: tuple[int, ...],
    fractions: tuple[float, ...],
    threshold_kinds: tuple[str, ...],
    threshold_keep: str,
    max_subset_size: int | None,
    workers: int,
    seed: int,
    timings: bool,
    output_dir: Path,
    force: bool,
) -> None:
    """Run one of the experiments (I-V) over scored slices."""
    _check_output(output_dir, force)
    manifest = _start(ctx, seed)
    spec = ExperimentSpec(
        experiment_id=experiment_id,
        limits=limits,
        slice_sizes=slice_sizes,
        prefix_fractions=fractions,
        threshold_kinds=threshold_kinds,
        threshold_keep=threshold_keep,
        max_subset_size=max_subset_size,
        seed=seed,
    )
    datasets: list[CampaignDataset] = []
    for log in logs:
        scored = _load_scored(ctx, log)
        datasets.extend(make_campaign_slices(scored, slice_size) if slice_size else [scored])
    report = asyncio.run(arun_experiment(spec.experiment_id, datasets, spec, workers=workers))
    outputs = report.write(output_dir, include_timings=timings)
    _finish(manifest, list(logs), outputs, output_dir)


@main.command()
@click.argument("manifest_file", type=click.Path(exists=True, dir_okay=False, path_type=Path))
def replay(manifest_file: Path) -> None:
    """Re-run a recorded command and check its outputs are byte-identical."""
    recorded = RunManifest.load(manifest_file)
    changed = recorded.changed_inputs()
    if changed:
        raise DataError(f"inputs changed since the recorded run: {', '.join(changed)}")
    argv = recorded.argv if "--force" in recorded.argv else recorded.argv + ["--force"]
    main.main(args=argv, prog_name="rtbconfig", standalone_mode=False)
    mismatched = recorded.changed_outputs()
    if mismatched:
        raise DataError(f"replay produced different outputs: {', '.join(mismatched)}")
    click.echo(f"replay of {recorded.command} reproduced {len(recorded.outputs)} outputs")


def run() -> None:
    """Console-script entry point."""
    main(prog_name="rtbconfig")


if __name__ == "__main__":
    run()
