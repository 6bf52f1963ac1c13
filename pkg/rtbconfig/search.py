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

"""Exhaustive attribute-configuration search with rejected-subset pruning.

Subsets are evaluated level by level (all subsets of size k before any of
size k + 1). A group of rows that matches fewer than ``limit`` rows can
never grow into a qualifying configuration, so at level k a row is only
grouped when its group qualified in every (k - 1)-subset below it. Group
sizes are unaffected by this: all rows of one group share the same
sub-projections, so a group is either fully alive or skipped.
"""
from __future__ import annotations

import json
import logging
import math
import time
from collections.abc import Iterable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from itertools import combinations, groupby
from pathlib import Path
from typing import NamedTuple

import numpy as np
import pandas as pd

from .dataset import CampaignDataset
from .exceptions import InvalidArgument
from .scoring import profitability_weights, ranking_key, sequential_sum
from .typing import RankedConfigurationData

__all__ = [
    "Configuration",
    "RejectedSet",
    "ScoredConfiguration",
    "SearchParams",
    "SearchStats",
    "SequentialRound",
    "count_attribute_subsets",
    "count_configurations",
    "enumerate_subsets",
    "evaluate_configuration",
    "prune_check",
    "search",
    "search_sequential",
    "unique_value_tuples",
    "write_ranked",
]

_LOGGER = logging.getLogger(__name__)

Subset = tuple[int, ...]
RANKED_COLUMNS = (
    "rank",
    "avg_profitability",
    "matched_rows",
    "selected_columns",
    "values",
    "elapsed_seconds",
    "quality_score",
)


@dataclass(frozen=True)
class Configuration:
    """A conjunction of (attribute index = value) constraints."""

    attribute_indices: tuple[int, ...]
    values: tuple[int, ...]

    def __post_init__(self) -> None:
        """Normalise to int tuples and validate."""
        indices = tuple(int(i) for i in self.attribute_indices)
        values = tuple(int(v) for v in self.values)
        object.__setattr__(self, "attribute_indices", indices)
        object.__setattr__(self, "values", values)
        if not indices:
            raise InvalidArgument("a configuration needs at least one attribute")
        if len(indices) != len(values):
            raise InvalidArgument(f"{len(indices)} attributes but {len(values)} values")
        if indices[0] < 0 or any(a >= b for a, b in zip(indices, indices[1:])):
            raise InvalidArgument(f"attribute indices must be strictly increasing: {indices}")

    def __len__(self) -> int:
        return len(self.attribute_indices)

    def __str__(self) -> str:
        return ", ".join(f"cat{a + 1}={v}" for a, v in self.pairs())

    def pairs(self) -> tuple[tuple[int, int], ...]:
        """Return the (attribute, value) pairs."""
        return tuple(zip(self.attribute_indices, self.values))

    def contains(self, other: Configuration) -> bool:
        """Return True when every pair of ``other`` is also a pair of this configuration."""
        return set(other.pairs()) <= set(self.pairs())

    def matches(self, attributes: np.ndarray) -> np.ndarray:
        """Return the boolean row mask of an (rows, attributes) array."""
        attributes = np.asarray(attributes)
        mask = np.ones(len(attributes), dtype=bool)
        for attribute, value in self.pairs():
            mask &= attributes[:, attribute] == value
        return mask


@dataclass(frozen=True)
class ScoredConfiguration:
    """A configuration with its matched rows, average profitability and Quality Score."""

    config: Configuration
    matched_rows: int
    avg_profitability: float
    quality_score: float
    profitability_sum: float
    limit: int
    elapsed_seconds: float = field(default=0.0, compare=False)

    @property
    def sort_key(self) -> tuple:
        """Return the ranking key (best first)."""
        return ranking_key(self.quality_score, self.matched_rows, self.config.attribute_indices, self.config.values)

    def to_dict(self, rank: int, include_timings: bool = False) -> RankedConfigurationData:
        """Return the serialized row of a ranked result."""
        return {
            "rank": rank,
            "avg_profitability": self.avg_profitability,
            "matched_rows": self.matched_rows,
            "selected_columns": list(self.config.attribute_indices),
            "values": list(self.config.values),
            "elapsed_seconds": self.elapsed_seconds if include_timings else None,
            "quality_score": self.quality_score,
        }


class RejectedSet:
    """Configurations known to match fewer rows than ``limit``.

    Entries are kept per attribute subset as a set of value tuples, so a
    sub-configuration check is one set membership test.
    """

    def __init__(self, limit: int) -> None:
        """Initialize an empty set valid for ``limit``."""
        self.limit = limit
        self._entries: dict[Subset, set[tuple[int, ...]]] = {}

    def __len__(self) -> int:
        return sum(len(values) for values in self._entries.values())

    def __contains__(self, config: object) -> bool:
        if not isinstance(config, Configuration):
            return False
        return config.values in self._entries.get(config.attribute_indices, ())

    def add(self, config: Configuration) -> None:
        """Record one rejected configuration."""
        self._entries.setdefault(config.attribute_indices, set()).add(config.values)

    def update(self, attrs: Subset, value_tuples: Iterable[tuple[int, ...]]) -> None:
        """Record many rejected value tuples of one subset."""
        self._entries.setdefault(tuple(attrs), set()).update(tuple(v) for v in value_tuples)

    def contains_subconfiguration(self, config: Configuration) -> bool:
        """Return True when a recorded configuration is a sub-configuration of ``config``.

        Checked from one-element sub-configurations upward.
        """
        pairs = config.pairs()
        for size in range(1, len(pairs) + 1):
            for combo in combinations(pairs, size):
                attrs = tuple(a for a, _ in combo)
                if tuple(v for _, v in combo) in self._entries.get(attrs, ()):
                    return True
        return False


def prune_check(rejected: RejectedSet, config: Configuration) -> bool:
    """Return True (skip ``config``) when it contains a rejected configuration."""
    return rejected.contains_subconfiguration(config)


@dataclass(frozen=True)
class SearchParams:
    """Search parameters; ``limit`` is the required number of visits."""

    limit: int
    allow_below_limit: bool = False
    max_subset_size: int | None = None
    prune: bool = True
    top: int | None = None

    def __post_init__(self) -> None:
        """Validate."""
        if self.limit < 1:
            raise InvalidArgument(f"limit must be at least 1, got {self.limit}")
        if self.max_subset_size is not None and self.max_subset_size < 1:
            raise InvalidArgument(f"max_subset_size must be at least 1, got {self.max_subset_size}")
        if self.top is not None and self.top < 1:
            raise InvalidArgument(f"top must be at least 1, got {self.top}")


@dataclass
class SearchStats:
    """Counters collected by one search run."""

    subsets_evaluated: int = 0
    subsets_skipped: int = 0
    groups_scored: int = 0
    groups_qualified: int = 0
    groups_rejected: int = 0
    rows_grouped: int = 0
    elapsed_seconds: float = 0.0


class SequentialRound(NamedTuple):
    """One round of the sequential search and the rows left after removing its matches."""

    result: ScoredConfiguration
    remaining_rows: int


def count_attribute_subsets(n: int) -> int:
    """Return the number of non-empty attribute subsets, sum of C(n, k) = 2**n - 1."""
    if n < 1:
        raise InvalidArgument(f"n must be at least 1, got {n}")
    return sum(math.comb(n, k) for k in range(1, n + 1))


def enumerate_subsets(n: int, max_size: int | None = None) -> list[Subset]:
    """Return all non-empty subsets of size <= max_size, by size then lexicographically."""
    max_size = n if max_size is None else max_size
    if not 1 <= max_size <= n:
        raise InvalidArgument(f"max_size must lie in [1, {n}], got {max_size}")
    return [subset for size in range(1, max_size + 1) for subset in combinations(range(n), size)]


def unique_value_tuples(d: CampaignDataset, attrs: Sequence[int]) -> dict[tuple[int, ...], np.ndarray]:
    """Bucket row indices by their projection onto ``attrs`` (sorted by value tuple)."""
    attrs = list(attrs)
    if len(d) == 0:
        return {}
    projected = d.attributes[:, attrs]
    keys, inverse = np.unique(projected, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    order = np.argsort(inverse, kind="stable")
    bounds = np.cumsum(np.bincount(inverse, minlength=len(keys)))[:-1]
    return {
        tuple(int(v) for v in key): rows
        for key, rows in zip(keys, np.split(order, bounds))
    }


class _Groups(NamedTuple):
    rows: np.ndarray
    inverse: np.ndarray
    first: np.ndarray
    counts: np.ndarray


@dataclass
class _SubsetOutcome:
    attrs: Subset
    skipped: bool = False
    codes: np.ndarray | None = None
    qualified: np.ndarray | None = None
    candidates: list[ScoredConfiguration] = field(default_factory=list)
    rejected_values: np.ndarray | None = None
    groups: int = 0
    qualified_groups: int = 0
    rows: int = 0


class _Columns:
    """Dense per-column codes shared read-only by the workers."""

    def __init__(self, attributes: np.ndarray) -> None:
        self.codes: list[np.ndarray] = []
        self.cards: list[int] = []
        for position in range(attributes.shape[1]):
            uniq, inverse = np.unique(attributes[:, position], return_inverse=True)
            self.codes.append(inverse.reshape(-1).astype(np.int64))
            self.cards.append(len(uniq))
        self.code_dtype = np.int32 if len(attributes) < 2 ** 31 else np.int64

    def group(self, attrs: Subset, prefix_codes: np.ndarray | None, rows: np.ndarray) -> _Groups:
        """Group ``rows`` by their projection onto ``attrs`` given the prefix codes."""
        last = attrs[-1]
        key = self.codes[last][rows]
        if prefix_codes is not None:
            key = prefix_codes[rows].astype(np.int64) * self.cards[last] + key
        _, first, inverse, counts = np.unique(key, return_index=True, return_inverse=True, return_counts=True)
        return _Groups(rows, inverse.reshape(-1), first, counts)


class _LevelSearch:
    def __init__(self, d: CampaignDataset, params: SearchParams, collect_rejected: bool) -> None:
        self.d = d
        self.params = params
        self.strict = not params.allow_below_limit
        self.prune = params.prune and self.strict
        self.collect_rejected = collect_rejected and self.strict
        self.weights = profitability_weights(d)
        self.columns = _Columns(d.attributes)
        self.all_rows = np.arange(len(d))
        self.codes: dict[Subset, np.ndarray] = {}
        self.qualified: dict[Subset, np.ndarray] = {}
        self.started = time.perf_counter()

    def _alive(self, attrs: Subset) -> np.ndarray | None:
        """Return the rows whose every immediate sub-projection qualified, or None if there are none."""
        alive: np.ndarray | None = None
        for drop in range(len(attrs)):
            mask = self.qualified.get(attrs[:drop] + attrs[drop + 1:])
            if mask is None:
                return None
            alive = mask.copy() if alive is None else np.logical_and(alive, mask, out=alive)
        if alive is None or not alive.any():
            return None
        return np.flatnonzero(alive)

    def evaluate(self, attrs: Subset) -> _SubsetOutcome:
        limit = self.params.limit
        if len(attrs) == 1 or not self.prune:
            rows = self.all_rows
        else:
            rows = self._alive(attrs)
            if rows is None:
                return _SubsetOutcome(attrs, skipped=True)
        prefix = self.codes.get(attrs[:-1]) if len(attrs) > 1 else None
        groups = self.columns.group(attrs, prefix, rows)
        sums = np.bincount(groups.inverse, weights=self.weights[rows], minlength=len(groups.counts))
        avg = sums / groups.counts
        scores = avg * np.minimum(groups.counts, limit)
        values = self.d.attributes[rows[groups.first]][:, list(attrs)]
        passing = groups.counts >= limit

        outcome = _SubsetOutcome(attrs, groups=len(groups.counts), qualified_groups=int(passing.sum()), rows=len(rows))
        if self.prune:
            if outcome.qualified_groups:
                qualified = np.zeros(len(self.d), dtype=bool)
                qualified[rows] = passing[groups.inverse]
                outcome.qualified = qualified
            if self.collect_rejected:
                outcome.rejected_values = values[~passing]
        if not self.prune or outcome.qualified_groups:
            codes = np.full(len(self.d), -1, dtype=self.columns.code_dtype)
            codes[rows] = groups.inverse
            outcome.codes = codes

        keep = np.flatnonzero(passing) if self.strict else np.arange(len(groups.counts))
        if self.params.top is not None and len(keep) > self.params.top:
            keys = [values[keep, column] for column in reversed(range(len(attrs)))]
            order = np.lexsort(keys + [-groups.counts[keep], -scores[keep]])
            keep = keep[order[:self.params.top]]
        elapsed = time.perf_counter() - self.started
        for g in keep:
            outcome.candidates.append(
                ScoredConfiguration(
                    config=Configuration(attrs, tuple(values[g].tolist())),
                    matched_rows=int(groups.counts[g]),
                    avg_profitability=float(avg[g]),
                    quality_score=float(scores[g]),
                    profitability_sum=float(sums[g]),
                    limit=limit,
                    elapsed_seconds=elapsed,
                )
            )
        return outcome


def search(
    d: CampaignDataset,
    params: SearchParams,
    *,
    workers: int = 1,
    rejected: RejectedSet | None = None,
    stats: SearchStats | None = None,
) -> list[ScoredConfiguration]:
    """Rank every (attribute subset, value tuple) configuration of ``d`` by Quality Score.

    With ``allow_below_limit`` false only configurations matching at least
    ``limit`` rows are returned and the rest are recorded in ``rejected``
    when one is given. The result does not depend on ``workers`` or on
    ``params.prune``.
    """
    if d.profitability is None:
        raise InvalidArgument("dataset has no profitability column")
    if rejected is not None and rejected.limit != params.limit:
        raise InvalidArgument(f"rejected set was built for limit {rejected.limit}, not {params.limit}")
    if workers < 1:
        raise InvalidArgument(f"workers must be at least 1, got {workers}")
    n_attributes = d.n_attributes
    max_size = n_attributes if params.max_subset_size is None else params.max_subset_size
    if max_size > n_attributes:
        raise InvalidArgument(f"max_subset_size {max_size} exceeds {n_attributes} attributes")
    stats = SearchStats() if stats is None else stats
    if len(d) == 0:
        return []

    state = _LevelSearch(d, params, rejected is not None)
    results: list[ScoredConfiguration] = []
    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for size, grouped in groupby(enumerate_subsets(n_attributes, max_size), key=len):
            level = list(grouped)
            outcomes = list(pool.map(state.evaluate, level)) if pool else [state.evaluate(s) for s in level]
            codes: dict[Subset, np.ndarray] = {}
            qualified: dict[Subset, np.ndarray] = {}
            for outcome in outcomes:
                if outcome.skipped:
                    stats.subsets_skipped += 1
                    continue
                stats.subsets_evaluated += 1
                stats.groups_scored += outcome.groups
                stats.groups_qualified += outcome.qualified_groups
                stats.groups_rejected += outcome.groups - outcome.qualified_groups
                stats.rows_grouped += outcome.rows
                if outcome.codes is not None:
                    codes[outcome.attrs] = outcome.codes
                if outcome.qualified is not None:
                    qualified[outcome.attrs] = outcome.qualified
                if rejected is not None and outcome.rejected_values is not None:
                    rejected.update(outcome.attrs, map(tuple, outcome.rejected_values.tolist()))
                results.extend(outcome.candidates)
            state.codes, state.qualified = codes, qualified
            _LOGGER.info(
                "level %d: %d/%d subsets evaluated, %d configurations kept",
                size,
                sum(not o.skipped for o in outcomes),
                len(level),
                sum(len(o.candidates) for o in outcomes),
            )
            if state.prune and not qualified:
                stats.subsets_skipped += sum(math.comb(n_attributes, k) for k in range(size + 1, max_size + 1))
                break
    finally:
        if pool is not None:
            pool.shutdown()

    results.sort(key=lambda r: r.sort_key)
    if params.top is not None:
        del results[params.top:]
    stats.elapsed_seconds = time.perf_counter() - state.started
    _LOGGER.debug("search finished: %s", stats)
    return results


def search_sequential(
    d: CampaignDataset,
    params: SearchParams,
    n_slices: int,
    *,
    workers: int = 1,
) -> list[SequentialRound]:
    """Repeatedly take the rank-1 configuration and remove the rows it matches.

    Stops early, with a warning, when a round finds no configuration.
    """
    if n_slices < 1:
        raise InvalidArgument(f"n_slices must be at least 1, got {n_slices}")
    single = replace(params, top=1)
    working = d
    rounds: list[SequentialRound] = []
    for number in range(1, n_slices + 1):
        ranked = search(working, single, workers=workers)
        if not ranked:
            _LOGGER.warning(
                "sequential search stopped after %d of %d rounds: nothing qualifies at limit %d in %d rows",
                number - 1,
                n_slices,
                params.limit,
                len(working),
            )
            break
        best = ranked[0]
        working = working.take(~best.config.matches(working.attributes))
        rounds.append(SequentialRound(best, len(working)))
        _LOGGER.debug("round %d: %s matched %d rows, %d left", number, best.config, best.matched_rows, len(working))
    return rounds


def evaluate_configuration(d: CampaignDataset, config: Configuration, limit: int) -> ScoredConfiguration:
    """Score one configuration on ``d`` with the same arithmetic as :func:`search`."""
    if limit < 1:
        raise InvalidArgument(f"limit must be at least 1, got {limit}")
    started = time.perf_counter()
    matched = profitability_weights(d)[config.matches(d.attributes)]
    count = len(matched)
    total = sequential_sum(matched)
    avg = total / count if count else 0.0
    return ScoredConfiguration(
        config=config,
        matched_rows=count,
        avg_profitability=avg,
        quality_score=avg * min(count, limit),
        profitability_sum=total,
        limit=limit,
        elapsed_seconds=time.perf_counter() - started,
    )


def count_configurations(d: CampaignDataset, max_subset_size: int | None = None) -> int:
    """Return the number of distinct (attribute subset, value tuple) pairs in ``d``."""
    if len(d) == 0:
        return 0
    columns = _Columns(d.attributes)
    rows = np.arange(len(d))
    codes: dict[Subset, np.ndarray] = {}
    total = 0
    for _, grouped in groupby(enumerate_subsets(d.n_attributes, max_subset_size), key=len):
        level: dict[Subset, np.ndarray] = {}
        for attrs in grouped:
            groups = columns.group(attrs, codes.get(attrs[:-1]), rows)
            total += len(groups.counts)
            level[attrs] = groups.inverse
        codes = level
    return total


def write_ranked(
    results: Sequence[ScoredConfiguration],
    path: str | Path,
    fmt: str = "csv",
    include_timings: bool = False,
) -> Path:
    """Write ranked results as delimited text (``csv``/``tsv``) or ``json``."""
    path = Path(path)
    rows = [result.to_dict(rank, include_timings) for rank, result in enumerate(results, start=1)]
    if fmt == "json":
        with open(path, "w", encoding="utf-8", newline="\n") as handle:
            json.dump(rows, handle, indent=2, sort_keys=True)
            handle.write("\n")
        return path
    if fmt not in ("csv", "tsv"):
        raise InvalidArgument(f"unknown output format {fmt!r}")
    frame = pd.DataFrame(rows, columns=list(RANKED_COLUMNS))
    frame["selected_columns"] = [" ".join(map(str, row["selected_columns"])) for row in rows]
    frame["values"] = [" ".join(map(str, row["values"])) for row in rows]
    frame.to_csv(path, sep="\t" if fmt == "tsv" else ",", index=False, lineterminator="\n")
    return path
