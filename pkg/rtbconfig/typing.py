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

"""rtbconfig JSON document types."""
from __future__ import annotations

from typing import TypedDict


class RankedConfigurationData(TypedDict):
    """One row of a ranked search result."""

    rank: int
    avg_profitability: float
    matched_rows: int
    selected_columns: list[int]
    values: list[int]
    elapsed_seconds: float | None
    quality_score: float


class ConfusionData(TypedDict):
    """Confusion matrix with explicit orientation."""

    true_positive: int
    false_positive: int
    false_negative: int
    true_negative: int


class ModelMetricsData(TypedDict):
    """Metrics of the conversion model."""

    log_loss: float
    mae: float
    mse: float
    rmse: float
    auc: float | None
    accuracy: float
    avg_accuracy: float
    sensitivity: float
    specificity: float
    precision: float
    f1: float
    confusion: ConfusionData
    rows: int
    threshold: float


class SequentialRoundData(TypedDict):
    """One round of sequential selection."""

    round: int
    avg_profitability: float
    matched_rows: int
    selected_columns: list[int]
    values: list[int]
    remaining_rows: int


class ManifestData(TypedDict):
    """Run manifest document."""

    argv: list[str]
    command: str
    config: dict[str, object]
    inputs: dict[str, str]
    outputs: dict[str, str]
    seed: int | None
    code_version: str
    started_at: str
    finished_at: str


class ReportData(TypedDict):
    """Experiment report document."""

    experiment_id: str
    spec: dict[str, object]
    slices: list[dict[str, object]]
    cells: list[dict[str, object]]
    aggregate: list[dict[str, object]]
    metadata: dict[str, object]
