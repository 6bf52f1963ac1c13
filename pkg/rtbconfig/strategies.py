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

"""Campaign strategies evaluated over campaign slices.

Each experiment runs a per-slice function over every slice (slices are
independent) and aggregates the per-slice cells by sum and mean:

  I    best configuration for each required number of visits
  II   several small sequential configurations versus one large one
  III  configuration found on a time prefix, re-evaluated on the full slice
  IV   search restricted to the cheaper (or more profitable) half of a slice
  V    scoring with and without the required-visits restriction
"""
from __future__ import annotations

import asyncio
import json
import logging
import math
import time
from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd

from .dataset import CampaignDataset
from .exceptions import InvalidArgument, SpecificationError
from .search import (
    ScoredConfiguration,
    SearchParams,
    evaluate_configuration,
    search,
    search_sequential,
)
from .typing import ReportData, SequentialRoundData

__all__ = [
    "DEFAULT_FRACTIONS",
    "DEFAULT_LIMITS",
    "DEFAULT_SLICE_SIZES",
    "EXPERIMENT_IDS",
    "SEQUENTIAL_LIMITS",
    "ExperimentReport",
    "ExperimentSpec",
    "arun_experiment",
    "run_experiment",
    "run_experiment_1",
    "run_experiment_2",
    "run_experiment_3",
    "run_experiment_4",
    "run_experiment_5",
    "threshold_mask",
]

_LOGGER = logging.getLogger(__name__)

EXPERIMENT_IDS = ("I", "II", "III", "IV", "V")
DEFAULT_LIMITS = tuple(range(5_000, 50_001, 5_000))
SEQUENTIAL_LIMITS = tuple(range(5_000, 30_001, 5_000))
DEFAULT_SLICE_SIZES = (1_000, 2_500)
DEFAULT_FRACTIONS = tuple(k / 10 for k in range(1, 11))
THRESHOLD_KINDS = ("cost", "profitability", "none")
THRESHOLD_KEEP = ("favourable", "unfavourable")


@dataclass(frozen=True)
class ExperimentSpec:
    """Parameters of one experiment run; defaults follow each experiment's own grid."""

    experiment_id: str
    limits: tuple[int, ...] | None = None
    slice_sizes: tuple[int, ...] = DEFAULT_SLICE_SIZES
    prefix_fractions: tuple[float, ...] = DEFAULT_FRACTIONS
    threshold_kinds: tuple[str, ...] = ("cost", "profitability")
    threshold_keep: str = "favourable"
    max_subset_size: int | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        """Fill per-experiment defaults and validate the grids."""
        experiment_id = str(self.experiment_id).upper()
        if experiment_id not in EXPERIMENT_IDS:
            raise SpecificationError(f"unknown experiment {self.experiment_id!r}, expected one of {EXPERIMENT_IDS}")
        object.__setattr__(self, "experiment_id", experiment_id)
        limits = self.limits
        if limits is None:
            limits = SEQUENTIAL_LIMITS if experiment_id == "II" else DEFAULT_LIMITS
        object.__setattr__(self, "limits", tuple(int(v) for v in limits))
        object.__setattr__(self, "slice_sizes", tuple(int(v) for v in self.slice_sizes))
        object.__setattr__(self, "prefix_fractions", tuple(float(v) for v in self.prefix_fractions))
        object.__setattr__(self, "threshold_kinds", tuple(self.threshold_kinds))
        if not self.limits or self.limits[0] < 1 or any(a >= b for a, b in zip(self.limits, self.limits[1:])):
            raise SpecificationError(f"limits must be positive and ascending: {self.limits}")
        if not self.slice_sizes or min(self.slice_sizes) < 1:
            raise SpecificationError(f"slice sizes must be positive: {self.slice_sizes}")
        if not self.prefix_fractions or any(not 0.0 < f <= 1.0 for f in self.prefix_fractions):
            raise SpecificationError(f"prefix fractions must lie in (0, 1]: {self.prefix_fractions}")
        unknown = set(self.threshold_kinds) - set(THRESHOLD_KINDS)
        if not self.threshold_kinds or unknown:
            raise SpecificationError(f"threshold kinds must be drawn from {THRESHOLD_KINDS}: {self.threshold_kinds}")
        if self.threshold_keep not in THRESHOLD_KEEP:
            raise SpecificationError(f"threshold_keep must be one of {THRESHOLD_KEEP}")
        if self.max_subset_size is not None and self.max_subset_size < 1:
            raise SpecificationError("max_subset_size must be at least 1")

    def params(self, limit: int, allow_below_limit: bool = False) -> SearchParams:
        """Return rank-1 search parameters for ``limit``."""
        return SearchParams(
            limit=limit,
            allow_below_limit=allow_below_limit,
            max_subset_size=self.max_subset_size,
            top=1,
        )

    def to_dict(self) -> dict[str, Any]:
        """Return the settings as plain JSON values."""
        return {key: list(value) if isinstance(value, tuple) else value for key, value in asdict(self).items()}


Cell = dict[str, Any]

# Columns aggregated per experiment: (group keys, value columns).
_AGGREGATES: dict[str, tuple[tuple[str, ...], tuple[str, ...]]] = {
    "I": (("limit",), ("avg_profitability", "quality_score", "matched_rows", "elapsed_seconds")),
    "II": (("limit", "slice_size"), ("avg_profitability", "baseline_avg_profitability", "matched_rows", "elapsed_seconds")),
    "III": (("limit", "fraction"), ("avg_profitability", "optimum_avg_profitability", "ratio", "elapsed_seconds")),
    "IV": (("limit", "threshold_kind"), ("avg_profitability", "baseline_avg_profitability", "matched_rows", "elapsed_seconds")),
    "V": (("limit",), ("strict_quality_score", "relaxed_quality_score", "delta", "elapsed_seconds")),
}


def _jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def _code_version() -> str:
    from . import __version__

    return __version__


@dataclass
class ExperimentReport:
    """Per-slice cells, their aggregate and run metadata."""

    spec: ExperimentSpec
    slices: list[dict[str, Any]]
    cells: list[Cell]
    metadata: dict[str, Any] = field(default_factory=dict)

    @property
    def experiment_id(self) -> str:
        """Return the experiment id."""
        return self.spec.experiment_id

    @property
    def table(self) -> pd.DataFrame:
        """Return the cells as a DataFrame (absent values are NaN)."""
        keys, values = _AGGREGATES[self.experiment_id]
        frame = pd.DataFrame(self.cells)
        for column in ("slice",) + keys + values:
            if column not in frame:
                frame[column] = pd.Series(dtype=object if column in ("slice", "threshold_kind") else float)
        for column in values:
            frame[column] = pd.to_numeric(frame[column], errors="coerce").astype(float)
        return frame

    @property
    def aggregate(self) -> pd.DataFrame:
        """Return sum, mean and count of every value column per grid point."""
        keys, values = _AGGREGATES[self.experiment_id]
        grouped = self.table.groupby(list(keys), sort=True)[list(values)]
        # all-absent groups aggregate to NaN, not 0
        stats = {"sum": grouped.sum(min_count=1), "mean": grouped.mean(), "count": grouped.count()}
        frame = pd.concat(
            [stats[stat][column].rename(f"{column}_{stat}") for column in values for stat in ("sum", "mean", "count")],
            axis=1,
        )
        return frame.reset_index()

    def figure(self, include_timings: bool = False) -> pd.DataFrame:
        """Return the plot-ready table of this experiment."""
        frame = self.aggregate
        if not include_timings:
            frame = frame.drop(columns=[c for c in frame.columns if c.startswith("elapsed_seconds")])
        return frame

    def to_dict(self, include_timings: bool = False) -> ReportData:
        """Return the full JSON document."""
        cells = [dict(cell) for cell in self.cells]
        if not include_timings:
            for cell in cells:
                cell["elapsed_seconds"] = None
        return _jsonable(
            {
                "experiment_id": self.experiment_id,
                "spec": self.spec.to_dict(),
                "slices": self.slices,
                "cells": cells,
                "aggregate": self.figure(include_timings).to_dict(orient="records"),
                "metadata": self.metadata,
            }
        )

    def write(self, directory: str | Path, include_timings: bool = False) -> list[Path]:
        """Write ``report.json`` and the figure table into ``directory``."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        report = directory / "report.json"
        with open(report, "w", encoding="utf-8", newline="\n") as handle:
            json.dump(self.to_dict(include_timings), handle, indent=2, sort_keys=True, allow_nan=False)
            handle.write("\n")
        figure = directory / f"figure_{self.experiment_id}.csv"
        self.figure(include_timings).to_csv(figure, index=False, lineterminator="\n")
        return [report, figure]


def _best(d: CampaignDataset, params: SearchParams) -> ScoredConfiguration | None:
    ranked = search(d, params)
    return ranked[0] if ranked else None


def _describe(result: ScoredConfiguration | None, prefix: str = "") -> Cell:
    if result is None:
        return {
            f"{prefix}avg_profitability": None,
            f"{prefix}quality_score": None,
            f"{prefix}matched_rows": None,
            f"{prefix}selected_columns": None,
            f"{prefix}values": None,
        }
    return {
        f"{prefix}avg_profitability": result.avg_profitability,
        f"{prefix}quality_score": result.quality_score,
        f"{prefix}matched_rows": result.matched_rows,
        f"{prefix}selected_columns": list(result.config.attribute_indices),
        f"{prefix}values": list(result.config.values),
    }


def _cell(d: CampaignDataset, started: float, **values: Any) -> Cell:
    cell: Cell = {"slice": d.name, "campaign": d.campaign_id}
    cell.update(values)
    cell["elapsed_seconds"] = time.perf_counter() - started
    return cell


def _half_up(value: float) -> int:
    return int(math.floor(value + 0.5))


def slice_experiment_1(d: CampaignDataset, spec: ExperimentSpec) -> list[Cell]:
    """Best configuration of one slice for every limit."""
    cells = []
    for limit in spec.limits:
        started = time.perf_counter()
        best = _best(d, spec.params(limit))
        cells.append(_cell(d, started, limit=limit, **_describe(best)))
    return cells


def slice_experiment_2(d: CampaignDataset, spec: ExperimentSpec) -> list[Cell]:
    """Sequential small configurations against the single configuration at the same total."""
    cells = []
    for limit in spec.limits:
        baseline = _best(d, spec.params(limit))
        for size in spec.slice_sizes:
            started = time.perf_counter()
            planned = math.ceil(limit / size)
            rounds = search_sequential(d, spec.params(size), planned)
            rows = sum(r.result.matched_rows for r in rounds)
            total = sum(r.result.profitability_sum for r in rounds)
            detail: list[SequentialRoundData] = [
                {
                    "round": number,
                    "avg_profitability": r.result.avg_profitability,
                    "matched_rows": r.result.matched_rows,
                    "selected_columns": list(r.result.config.attribute_indices),
                    "values": list(r.result.config.values),
                    "remaining_rows": r.remaining_rows,
                }
                for number, r in enumerate(rounds, start=1)
            ]
            cells.append(
                _cell(
                    d,
                    started,
                    limit=limit,
                    slice_size=size,
                    rounds_planned=planned,
                    rounds_completed=len(rounds),
                    early_stop=len(rounds) < planned,
                    avg_profitability=total / rows if rows else None,
                    matched_rows=rows,
                    baseline_avg_profitability=None if baseline is None else baseline.avg_profitability,
                    baseline_matched_rows=None if baseline is None else baseline.matched_rows,
                    rounds=detail,
                )
            )
    return cells


def slice_experiment_3(d: CampaignDataset, spec: ExperimentSpec) -> list[Cell]:
    """Select on a time prefix, then score the selection on the whole slice."""
    cells = []
    for limit in spec.limits:
        optimum = _best(d, spec.params(limit))
        for fraction in spec.prefix_fractions:
            started = time.perf_counter()
            prefix_rows = _half_up(fraction * len(d))
            prefix_limit = max(1, _half_up(fraction * limit))
            chosen = _best(d.head(prefix_rows), spec.params(prefix_limit)) if prefix_rows else None
            evaluated = None if chosen is None else evaluate_configuration(d, chosen.config, limit)
            ratio = None
            if evaluated is not None and optimum is not None and optimum.avg_profitability > 0:
                ratio = evaluated.avg_profitability / optimum.avg_profitability
            cells.append(
                _cell(
                    d,
                    started,
                    limit=limit,
                    fraction=fraction,
                    prefix_rows=prefix_rows,
                    prefix_limit=prefix_limit,
                    prefix_avg_profitability=None if chosen is None else chosen.avg_profitability,
                    **_describe(evaluated),
                    qualifies=None if evaluated is None else evaluated.matched_rows >= limit,
                    optimum_avg_profitability=None if optimum is None else optimum.avg_profitability,
                    ratio=ratio,
                )
            )
    return cells


def threshold_mask(d: CampaignDataset, kind: str, keep: str = "favourable") -> tuple[np.ndarray, float | None]:
    """Return (rows kept, median threshold); ties at the median are kept.

    ``cost`` keeps the cheaper half and ``profitability`` the more profitable
    half; ``unfavourable`` flips the direction. Excluded rows never pass a
    profitability threshold.
    """
    if kind == "none":
        return np.ones(len(d), dtype=bool), None
    if kind == "cost":
        values = d.costs
        threshold = float(np.median(values)) if len(d) else 0.0
        keep_low = keep == "favourable"
    elif kind == "profitability":
        if d.profitability is None:
            raise InvalidArgument("dataset has no profitability column")
        values = d.profitability
        present = values[~np.isnan(values)]
        threshold = float(np.median(present)) if len(present) else 0.0
        keep_low = keep != "favourable"
    else:
        raise InvalidArgument(f"unknown threshold kind {kind!r}")
    with np.errstate(invalid="ignore"):
        mask = values <= threshold if keep_low else values >= threshold
    return mask, threshold


def slice_experiment_4(d: CampaignDataset, spec: ExperimentSpec) -> list[Cell]:
    """Search the half of the slice on the favourable side of the median."""
    baselines = {limit: _best(d, spec.params(limit)) for limit in spec.limits}
    cells = []
    for kind in spec.threshold_kinds:
        mask, threshold = threshold_mask(d, kind, spec.threshold_keep)
        kept = d if kind == "none" else d.take(mask)
        for limit in spec.limits:
            started = time.perf_counter()
            best = _best(kept, spec.params(limit)) if limit <= len(kept) else None
            baseline = baselines[limit]
            cells.append(
                _cell(
                    d,
                    started,
                    limit=limit,
                    threshold_kind=kind,
                    threshold=threshold,
                    kept_rows=len(kept),
                    **_describe(best),
                    baseline_avg_profitability=None if baseline is None else baseline.avg_profitability,
                )
            )
    return cells


def slice_experiment_5(d: CampaignDataset, spec: ExperimentSpec) -> list[Cell]:
    """Top Quality Score with and without the required-visits restriction."""
    cells = []
    for limit in spec.limits:
        started = time.perf_counter()
        strict = _best(d, spec.params(limit))
        relaxed = _best(d, spec.params(limit, allow_below_limit=True))
        strict_score = None if strict is None else strict.quality_score
        relaxed_score = None if relaxed is None else relaxed.quality_score
        cells.append(
            _cell(
                d,
                started,
                limit=limit,
                **_describe(strict, "strict_"),
                **_describe(relaxed, "relaxed_"),
                delta=None if relaxed_score is None else relaxed_score - (strict_score or 0.0),
            )
        )
    return cells


_SLICE_RUNNERS: dict[str, Callable[[CampaignDataset, ExperimentSpec], list[Cell]]] = {
    "I": slice_experiment_1,
    "II": slice_experiment_2,
    "III": slice_experiment_3,
    "IV": slice_experiment_4,
    "V": slice_experiment_5,
}


def _check_slices(slices: Sequence[CampaignDataset]) -> None:
    for d in slices:
        if d.profitability is None:
            raise InvalidArgument(f"slice {d.name or d.campaign_id} has no profitability column")


def _report(spec: ExperimentSpec, slices: Sequence[CampaignDataset], per_slice: list[list[Cell]], started: float) -> ExperimentReport:
    report = ExperimentReport(
        spec=spec,
        slices=[{"name": d.name, "campaign": d.campaign_id, "rows": len(d)} for d in slices],
        cells=[cell for cells in per_slice for cell in cells],
        metadata={"code_version": _code_version(), "seed": spec.seed},
    )
    _LOGGER.info(
        "experiment %s: %d slices, %d cells in %.1f s",
        spec.experiment_id,
        len(slices),
        len(report.cells),
        time.perf_counter() - started,
    )
    return report


def run_experiment(
    experiment_id: str,
    slices: Sequence[CampaignDataset],
    spec: ExperimentSpec | None = None,
    *,
    workers: int = 1,
) -> ExperimentReport:
    """Run one experiment over ``slices`` using up to ``workers`` threads."""
    spec = ExperimentSpec(experiment_id) if spec is None else spec
    if spec.experiment_id != str(experiment_id).upper():
        raise SpecificationError(f"spec is for experiment {spec.experiment_id}, not {experiment_id}")
    if workers < 1:
        raise InvalidArgument(f"workers must be at least 1, got {workers}")
    _check_slices(slices)
    runner = _SLICE_RUNNERS[spec.experiment_id]
    started = time.perf_counter()
    if workers == 1 or len(slices) < 2:
        per_slice = [runner(d, spec) for d in slices]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            per_slice = list(pool.map(lambda d: runner(d, spec), slices))
    return _report(spec, slices, per_slice, started)


async def arun_experiment(
    experiment_id: str,
    slices: Sequence[CampaignDataset],
    spec: ExperimentSpec | None = None,
    *,
    workers: int = 1,
) -> ExperimentReport:
    """Run one experiment with slices scheduled concurrently on worker threads."""
    spec = ExperimentSpec(experiment_id) if spec is None else spec
    if spec.experiment_id != str(experiment_id).upper():
        raise SpecificationError(f"spec is for experiment {spec.experiment_id}, not {experiment_id}")
    if workers < 1:
        raise InvalidArgument(f"workers must be at least 1, got {workers}")
    _check_slices(slices)
    runner = _SLICE_RUNNERS[spec.experiment_id]
    semaphore = asyncio.Semaphore(workers)
    started = time.perf_counter()

    async def _run(d: CampaignDataset) -> list[Cell]:
        async with semaphore:
            return await asyncio.to_thread(runner, d, spec)

    per_slice = await asyncio.gather(*(_run(d) for d in slices))
    return _report(spec, slices, list(per_slice), started)


def run_experiment_1(slices: Sequence[CampaignDataset], spec: ExperimentSpec | None = None, *, workers: int = 1) -> ExperimentReport:
    """Best configuration per required number of visits."""
    return run_experiment("I", slices, spec, workers=workers)


def run_experiment_2(slices: Sequence[CampaignDataset], spec: ExperimentSpec | None = None, *, workers: int = 1) -> ExperimentReport:
    """Several small sequential configurations versus one."""
    return run_experiment("II", slices, spec, workers=workers)


def run_experiment_3(slices: Sequence[CampaignDataset], spec: ExperimentSpec | None = None, *, workers: int = 1) -> ExperimentReport:
    """Configuration chosen from a time prefix."""
    return run_experiment("III", slices, spec, workers=workers)


def run_experiment_4(slices: Sequence[CampaignDataset], spec: ExperimentSpec | None = None, *, workers: int = 1) -> ExperimentReport:
    """Search on the favourable half of each slice."""
    return run_experiment("IV", slices, spec, workers=workers)


def run_experiment_5(slices: Sequence[CampaignDataset], spec: ExperimentSpec | None = None, *, workers: int = 1) -> ExperimentReport:
    """Quality Score with and without the required-visits restriction."""
    return run_experiment("V", slices, spec, workers=workers)
