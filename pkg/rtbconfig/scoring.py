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

"""Impression profitability and the Quality Score of a configuration."""
from __future__ import annotations

import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from .dataset import CampaignDataset
from .exceptions import InvalidArgument

__all__ = [
    "ProfitabilityColumn",
    "QualityScoreParams",
    "average_profitability",
    "impression_profitability",
    "profitability_column",
    "profitability_weights",
    "quality_score",
    "ranking_key",
    "score_dataset",
    "sequential_sum",
]

_LOGGER = logging.getLogger(__name__)


def impression_profitability(cvr: float, price: float) -> float | None:
    """Return cvr / price, or None when the price is not positive (excluded row)."""
    if not price > 0:
        return None
    return cvr / price


@dataclass(frozen=True, eq=False)
class ProfitabilityColumn:
    """Per-row profitability; excluded rows hold NaN."""

    values: np.ndarray

    @property
    def excluded(self) -> np.ndarray:
        """Return the boolean mask of rows with a non-positive price."""
        return np.isnan(self.values)

    @property
    def excluded_rows(self) -> np.ndarray:
        """Return the indices of excluded rows."""
        return np.flatnonzero(self.excluded)

    def __len__(self) -> int:
        return len(self.values)


def profitability_column(cvr: np.ndarray, cost: np.ndarray) -> ProfitabilityColumn:
    """Vectorized cvr / cost; rows with cost <= 0 are excluded."""
    cvr = np.asarray(cvr, dtype=np.float64)
    cost = np.asarray(cost, dtype=np.float64)
    if cvr.shape != cost.shape:
        raise InvalidArgument(f"cvr and cost are not aligned: {cvr.shape} vs {cost.shape}")
    values = np.full(cost.shape, np.nan)
    priced = cost > 0
    np.divide(cvr, cost, out=values, where=priced)
    values[np.isnan(cvr)] = np.nan
    values.setflags(write=False)
    return ProfitabilityColumn(values)


def score_dataset(d: CampaignDataset) -> CampaignDataset:
    """Return ``d`` with its profitability column computed from cvr and cost."""
    if d.cvr is None:
        raise InvalidArgument("dataset has no cvr column; run prediction first")
    column = profitability_column(d.cvr, d.costs)
    excluded = int(np.count_nonzero(column.excluded))
    if excluded:
        _LOGGER.warning("%d of %d rows have a non-positive price and are excluded", excluded, len(d))
    return d.with_profitability(column.values)


def profitability_weights(d: CampaignDataset) -> np.ndarray:
    """Return profitability with excluded rows contributing zero."""
    if d.profitability is None:
        raise InvalidArgument("dataset has no profitability column")
    return np.nan_to_num(d.profitability, nan=0.0)


def sequential_sum(values: np.ndarray) -> float:
    """Sum in row order (matches the grouped accumulation used by the search)."""
    if len(values) == 0:
        return 0.0
    return float(np.cumsum(values, dtype=np.float64)[-1])


@dataclass(frozen=True)
class QualityScoreParams:
    """Required-visits threshold T."""

    T: int

    def __post_init__(self) -> None:
        """Validate T."""
        if self.T < 1:
            raise InvalidArgument(f"T must be at least 1, got {self.T}")


def quality_score(avg_profitability: float, matched_rows: int, params: QualityScoreParams) -> float:
    """Return avg_profitability * min(matched_rows, T)."""
    return avg_profitability * min(matched_rows, params.T)


def average_profitability(d: CampaignDataset, subset: Sequence[int] | None = None) -> tuple[float, int]:
    """Return (mean profitability, row count) over ``subset`` (all rows when None).

    Excluded rows count toward the row count and add zero to the sum.
    """
    weights = profitability_weights(d)
    if subset is not None:
        weights = weights[np.asarray(subset, dtype=np.int64)]
    count = len(weights)
    if count == 0:
        return 0.0, 0
    return sequential_sum(weights) / count, count


def ranking_key(
    quality: float,
    matched_rows: int,
    attribute_indices: tuple[int, ...],
    values: tuple[int, ...],
) -> tuple[float, int, tuple[int, ...], tuple[int, ...]]:
    """Sort key: higher score, then more rows, then smaller attributes, then smaller values."""
    if math.isnan(quality):
        raise InvalidArgument("quality score is NaN")
    return (-quality, -matched_rows, attribute_indices, values)
