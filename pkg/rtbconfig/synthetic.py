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

"""Synthetic campaign data with planted profitable segments."""
from __future__ import annotations

import logging
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .dataset import N_ATTRIBUTES, CampaignDataset
from .exceptions import SpecificationError
from .scoring import profitability_column
from .search import Configuration

__all__ = [
    "CVR_FLOOR",
    "PlantedSegment",
    "SyntheticSpec",
    "generate_synthetic",
    "load_planted_segments",
    "load_synthetic_spec",
    "segments_overlap",
    "spec_from_mapping",
]

_LOGGER = logging.getLogger(__name__)

CVR_FLOOR = 1e-6


@dataclass(frozen=True)
class PlantedSegment:
    """Rows matching ``config`` convert at ``conversion_rate`` with gamma-distributed cost.

    ``share`` forces that fraction of all rows to carry the segment's values,
    which plants a niche of a known size when the values lie outside the
    attributes' natural cardinality.
    """

    config: Configuration
    conversion_rate: float
    cost_shape: float = 2.0
    cost_scale: float = 0.5
    share: float = 0.0

    def __post_init__(self) -> None:
        """Validate rate, cost and share."""
        if not 0.0 <= self.conversion_rate <= 1.0:
            raise SpecificationError(f"conversion rate outside [0, 1]: {self.conversion_rate}")
        if self.cost_shape <= 0 or self.cost_scale <= 0:
            raise SpecificationError(f"cost parameters must be positive: {self.cost_shape}, {self.cost_scale}")
        if not 0.0 <= self.share <= 1.0:
            raise SpecificationError(f"share outside [0, 1]: {self.share}")


def segments_overlap(a: Configuration, b: Configuration) -> bool:
    """Return True unless the two configurations disagree on a shared attribute."""
    pairs = dict(a.pairs())
    return all(pairs.get(attribute, value) == value for attribute, value in b.pairs())


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of a synthetic campaign slice."""

    n_rows: int
    n_attributes: int = N_ATTRIBUTES
    cardinality: int | tuple[int, ...] = 10
    segments: tuple[PlantedSegment, ...] = ()
    background_rate: float = 0.02
    background_cost_shape: float = 2.0
    background_cost_scale: float = 1.0
    click_rate: float = 0.0
    campaign_id: int = 0
    seed: int = 0
    fill_cvr: bool = False

    def __post_init__(self) -> None:
        """Validate the generator settings and reject ambiguous ground truth."""
        object.__setattr__(self, "segments", tuple(self.segments))
        if self.n_rows < 0 or self.n_attributes < 1:
            raise SpecificationError("n_rows must be >= 0 and n_attributes >= 1")
        if len(self.cardinalities) != self.n_attributes or min(self.cardinalities) < 1:
            raise SpecificationError(f"need {self.n_attributes} positive cardinalities, got {self.cardinality}")
        for name in ("background_rate", "click_rate"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise SpecificationError(f"{name} outside [0, 1]")
        if self.background_cost_shape <= 0 or self.background_cost_scale <= 0:
            raise SpecificationError("background cost parameters must be positive")
        for segment in self.segments:
            if segment.config.attribute_indices[-1] >= self.n_attributes:
                raise SpecificationError(f"segment {segment.config} uses an attribute beyond {self.n_attributes}")
        if sum(segment.share for segment in self.segments) > 1.0:
            raise SpecificationError("segment shares add up to more than 1")
        for i, first in enumerate(self.segments):
            for second in self.segments[i + 1:]:
                if segments_overlap(first.config, second.config):
                    raise SpecificationError(f"planted segments {first.config} and {second.config} overlap")

    @property
    def cardinalities(self) -> tuple[int, ...]:
        """Return the cardinality of every attribute."""
        if isinstance(self.cardinality, int):
            return (self.cardinality,) * self.n_attributes
        return tuple(int(c) for c in self.cardinality)


def generate_synthetic(spec: SyntheticSpec) -> CampaignDataset:
    """Draw a dataset from ``spec``; bit-reproducible for a fixed seed."""
    rng = np.random.default_rng(spec.seed)
    n = spec.n_rows
    attributes = rng.integers(0, np.asarray(spec.cardinalities), size=(n, spec.n_attributes), dtype=np.int64)

    order = rng.permutation(n)
    offset = 0
    for segment in spec.segments:
        forced = int(round(segment.share * n))
        if not forced:
            continue
        rows = order[offset:offset + forced]
        offset += forced
        for attribute, value in segment.config.pairs():
            attributes[rows, attribute] = value

    rate = np.full(n, spec.background_rate)
    shape = np.full(n, spec.background_cost_shape)
    scale = np.full(n, spec.background_cost_scale)
    for segment in spec.segments:
        member = segment.config.matches(attributes)
        rate[member] = segment.conversion_rate
        shape[member] = segment.cost_shape
        scale[member] = segment.cost_scale
        _LOGGER.debug("segment %s planted on %d rows", segment.config, int(member.sum()))

    conversions = (rng.random(n) < rate).astype(np.int8)
    costs = rng.gamma(shape, scale)
    clicks = (rng.random(n) < spec.click_rate).astype(np.int8)

    cvr = profitability = None
    if spec.fill_cvr:
        cvr = np.clip(rate, CVR_FLOOR, 1.0 - CVR_FLOOR)
        profitability = profitability_column(cvr, costs).values
    _LOGGER.info("generated %d synthetic rows with %d planted segments", n, len(spec.segments))
    return CampaignDataset.from_arrays(
        attributes,
        costs,
        conversions=conversions,
        clicks=clicks,
        cvr=cvr,
        profitability=profitability,
        campaign_id=spec.campaign_id,
        name=f"synthetic-{spec.seed}",
    )


def _attribute_index(name: str | int) -> int:
    """Map ``cat3`` (1-based name) or a 0-based integer to a column index."""
    if isinstance(name, int):
        return name
    text = str(name).strip().lower()
    if text.startswith("cat") and text[3:].isdigit():
        return int(text[3:]) - 1
    if text.isdigit():
        return int(text)
    raise SpecificationError(f"unknown attribute {name!r}")


def _segment_from_mapping(item: Mapping[str, Any]) -> PlantedSegment:
    where = item.get("where")
    if not isinstance(where, Mapping) or not where:
        raise SpecificationError(f"segment needs a non-empty 'where' mapping: {item!r}")
    pairs = sorted((_attribute_index(key), int(value)) for key, value in where.items())
    try:
        return PlantedSegment(
            config=Configuration(tuple(a for a, _ in pairs), tuple(v for _, v in pairs)),
            conversion_rate=float(item["conversion_rate"]),
            cost_shape=float(item.get("cost_shape", 2.0)),
            cost_scale=float(item.get("cost_scale", 0.5)),
            share=float(item.get("share", 0.0)),
        )
    except KeyError as err:
        raise SpecificationError(f"segment is missing {err}") from err
    except (TypeError, ValueError) as err:
        raise SpecificationError(f"invalid segment {item!r}: {err}") from err


def _read_yaml(path: str | Path) -> Any:
    try:
        with open(path, "r", encoding="utf-8") as handle:
            return yaml.safe_load(handle)
    except yaml.YAMLError as err:
        raise SpecificationError(f"{path}: {err}") from err


def load_planted_segments(path: str | Path) -> list[PlantedSegment]:
    """Read a plan file: a YAML list of segments or a mapping with a ``segments`` key.

    Each segment looks like ``{where: {cat1: 99}, conversion_rate: 0.3,
    cost_shape: 2.0, cost_scale: 0.2, share: 0.13}``.
    """
    document = _read_yaml(path)
    if isinstance(document, Mapping):
        document = document.get("segments", [])
    if not isinstance(document, list):
        raise SpecificationError(f"{path}: expected a list of segments")
    return [_segment_from_mapping(item) for item in document]


_SPEC_KEYS = {
    "rows": "n_rows",
    "n_rows": "n_rows",
    "attributes": "n_attributes",
    "n_attributes": "n_attributes",
    "cardinality": "cardinality",
    "background_rate": "background_rate",
    "background_cost_shape": "background_cost_shape",
    "background_cost_scale": "background_cost_scale",
    "click_rate": "click_rate",
    "campaign": "campaign_id",
    "campaign_id": "campaign_id",
    "seed": "seed",
    "fill_cvr": "fill_cvr",
}


def spec_from_mapping(mapping: Mapping[str, Any], **overrides: Any) -> SyntheticSpec:
    """Build a SyntheticSpec from flat keys (dashes or underscores) plus overrides."""
    values: dict = {}
    segments: Sequence[PlantedSegment] = ()
    for key, value in mapping.items():
        name = str(key).replace("-", "_")
        if name == "segments":
            segments = [_segment_from_mapping(item) for item in value or []]
        elif name in _SPEC_KEYS:
            values[_SPEC_KEYS[name]] = tuple(value) if isinstance(value, list) else value
        else:
            raise SpecificationError(f"unknown synthetic key {key!r}")
    if "n_rows" not in values and "n_rows" not in overrides:
        raise SpecificationError("synthetic spec needs 'rows'")
    spec = SyntheticSpec(segments=tuple(segments), **{**values, "n_rows": values.get("n_rows", 0)})
    return replace(spec, **overrides) if overrides else spec


def load_synthetic_spec(path: str | Path, **overrides: Any) -> SyntheticSpec:
    """Read a flat YAML synthetic spec (keys documented in the README)."""
    document = _read_yaml(path) or {}
    if not isinstance(document, Mapping):
        raise SpecificationError(f"{path}: expected a mapping")
    return spec_from_mapping(document, **overrides)
