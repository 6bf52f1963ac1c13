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

"""Evaluation of a conversion model on labelled data."""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass

import numpy as np
from sklearn.metrics import (
    auc as trapezoid_area,
    confusion_matrix,
    log_loss,
    mean_absolute_error,
    mean_squared_error,
    roc_auc_score,
    roc_curve,
)

from .cvr_model import CvrModel, predict_probabilities
from .dataset import CampaignDataset
from .exceptions import InvalidArgument
from .typing import ModelMetricsData

__all__ = ["EXACT_AUC_ROWS", "Confusion", "ModelMetrics", "evaluate_model", "evaluate_probabilities"]

_LOGGER = logging.getLogger(__name__)

EXACT_AUC_ROWS = 100_000
ROC_POINTS = 1000
CLIP = 1e-15


@dataclass(frozen=True)
class Confusion:
    """Labelled 2x2 confusion matrix (actual x predicted)."""

    true_positive: int
    false_positive: int
    false_negative: int
    true_negative: int

    @property
    def total(self) -> int:
        """Return the number of evaluated rows."""
        return self.true_positive + self.false_positive + self.false_negative + self.true_negative


def _rate(numerator: int, denominator: int) -> float:
    return numerator / denominator if denominator else 0.0


@dataclass(frozen=True)
class ModelMetrics:
    """The eleven model metrics and the confusion matrix they derive from."""

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
    confusion: Confusion
    rows: int
    threshold: float

    def to_dict(self) -> ModelMetricsData:
        """Return the JSON document of the metrics."""
        return asdict(self)  # type: ignore[return-value]


def _auc(labels: np.ndarray, probabilities: np.ndarray) -> float | None:
    """Exact rank-statistic AUC up to EXACT_AUC_ROWS rows, a thinned ROC curve above."""
    if len(np.unique(labels)) < 2:
        return None
    if len(labels) <= EXACT_AUC_ROWS:
        return float(roc_auc_score(labels, probabilities))
    fpr, tpr, _ = roc_curve(labels, probabilities, drop_intermediate=True)
    if len(fpr) > ROC_POINTS:
        keep = np.unique(np.linspace(0, len(fpr) - 1, ROC_POINTS).round().astype(int))
        fpr, tpr = fpr[keep], tpr[keep]
    return float(trapezoid_area(fpr, tpr))


def evaluate_probabilities(labels: np.ndarray, probabilities: np.ndarray, threshold: float = 0.5) -> ModelMetrics:
    """Compute the metrics of ``probabilities`` against binary ``labels``."""
    if not 0.0 < threshold < 1.0:
        raise InvalidArgument(f"threshold must lie in (0, 1), got {threshold}")
    labels = np.asarray(labels, dtype=np.int64)
    probabilities = np.asarray(probabilities, dtype=np.float64)
    if len(labels) == 0:
        raise InvalidArgument("cannot evaluate on an empty dataset")
    predicted = (probabilities >= threshold).astype(np.int64)
    tn, fp, fn, tp = (int(v) for v in confusion_matrix(labels, predicted, labels=[0, 1]).ravel())
    clipped = np.clip(probabilities, CLIP, 1.0 - CLIP)
    mse = float(mean_squared_error(labels, probabilities))
    sensitivity = _rate(tp, tp + fn)
    specificity = _rate(tn, tn + fp)
    precision = _rate(tp, tp + fp)
    auc = _auc(labels, probabilities)
    if auc is None:
        _LOGGER.warning("labels contain a single class; AUC is undefined")
    return ModelMetrics(
        log_loss=float(log_loss(labels, clipped, labels=[0, 1])),
        mae=float(mean_absolute_error(labels, probabilities)),
        mse=mse,
        rmse=math.sqrt(mse),
        auc=auc,
        accuracy=_rate(tp + tn, len(labels)),
        avg_accuracy=(sensitivity + specificity) / 2,
        sensitivity=sensitivity,
        specificity=specificity,
        precision=precision,
        f1=_rate(2 * tp, 2 * tp + fp + fn),
        confusion=Confusion(tp, fp, fn, tn),
        rows=len(labels),
        threshold=threshold,
    )


def evaluate_model(m: CvrModel, data: CampaignDataset, threshold: float = 0.5) -> ModelMetrics:
    """Predict every row of ``data`` and compare with its conversion labels."""
    metrics = evaluate_probabilities(data.conversions, predict_probabilities(m, data), threshold)
    _LOGGER.info(
        "evaluated %d rows: log loss %.4f, auc %s, accuracy %.4f",
        metrics.rows,
        metrics.log_loss,
        "n/a" if metrics.auc is None else f"{metrics.auc:.4f}",
        metrics.accuracy,
    )
    return metrics
