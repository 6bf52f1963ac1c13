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

"""Online logistic regression over hashed categorical attributes.

The model keeps one weight and one occurrence count per hash slot. Each
training row is predicted first and then every active slot moves against
the log-loss gradient with a step of ``alpha / sqrt(n + 1)``. There is no
intercept and no regularization.
"""
from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .dataset import CampaignDataset, ImpressionRecord
from .exceptions import CheckpointError, InvalidArgument

__all__ = [
    "DEFAULT_ALPHA",
    "DEFAULT_D",
    "CvrModel",
    "HashedRow",
    "TrainResult",
    "hash_dataset",
    "hash_row",
    "load_model",
    "predict",
    "predict_all",
    "predict_probabilities",
    "save_model",
    "sgd_update",
    "train",
]

_LOGGER = logging.getLogger(__name__)

DEFAULT_D = 2 ** 20
DEFAULT_ALPHA = 0.1
LOSS_WINDOW = 100_000
LOSS_EPS = 1e-15
CHUNK_ROWS = 100_000

P_MIN = float(np.finfo(np.float64).tiny)
P_MAX = float(np.nextafter(1.0, 0.0))

CHECKPOINT_MAGIC = b"RTBCVR\x00\x01"
CHECKPOINT_VERSION = 1
FLAG_SALTED = 1
_HEADER = np.dtype(
    [("version", "<u4"), ("flags", "<u4"), ("D", "<u8"), ("alpha", "<f8"), ("rows", "<u8")]
)


@dataclass
class CvrModel:
    """Weights ``w`` and occurrence counts ``n`` over a hash space of size ``D``."""

    D: int = DEFAULT_D
    alpha: float = DEFAULT_ALPHA
    salted: bool = False
    w: np.ndarray = field(default=None, repr=False)  # type: ignore[assignment]
    n: np.ndarray = field(default=None, repr=False)  # type: ignore[assignment]
    rows_trained: int = 0

    def __post_init__(self) -> None:
        """Allocate the vectors and validate D and alpha."""
        if self.D < 1 or self.D & (self.D - 1):
            raise InvalidArgument(f"D must be a positive power of two, got {self.D}")
        if not self.alpha > 0:
            raise InvalidArgument(f"alpha must be positive, got {self.alpha}")
        self.w = np.zeros(self.D) if self.w is None else np.asarray(self.w, dtype=np.float64)
        self.n = np.zeros(self.D, dtype=np.uint64) if self.n is None else np.asarray(self.n, dtype=np.uint64)
        if self.w.shape != (self.D,) or self.n.shape != (self.D,):
            raise InvalidArgument(f"w and n must have length D={self.D}")

    def copy(self) -> CvrModel:
        """Return an independent copy."""
        return CvrModel(self.D, self.alpha, self.salted, self.w.copy(), self.n.copy(), self.rows_trained)


class HashedRow(NamedTuple):
    """Hash-slot indices of one row (one per attribute) and its label."""

    indices: tuple[int, ...]
    label: int


class TrainResult(NamedTuple):
    """Trained model plus the average log loss of every window of training rows."""

    model: CvrModel
    window_losses: list[float]
    window: int


def _stable_hash(position: int, value: int) -> int:
    digest = hashlib.blake2b(f"{position}:{value}".encode("ascii"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def hash_row(r: ImpressionRecord, D: int, salted: bool = False) -> HashedRow:
    """Map each attribute value to a slot: ``value mod D``, or a position-salted hash mod D."""
    if D < 1:
        raise InvalidArgument(f"D must be positive, got {D}")
    if salted:
        indices = tuple(_stable_hash(position, value) % D for position, value in enumerate(r.attributes))
    else:
        indices = tuple(value % D for value in r.attributes)
    return HashedRow(indices, r.conversion)


def hash_dataset(d: CampaignDataset, D: int, salted: bool = False) -> np.ndarray:
    """Return the (rows, attributes) slot indices of every row."""
    if not salted:
        return np.mod(d.attributes, D)
    slots = np.empty(d.attributes.shape, dtype=np.int64)
    for position in range(d.n_attributes):
        values, inverse = np.unique(d.attributes[:, position], return_inverse=True)
        hashed = np.array([_stable_hash(position, int(v)) % D for v in values], dtype=np.int64)
        slots[:, position] = hashed[inverse.reshape(-1)]
    return slots


def _sigmoid(s: float) -> float:
    if s >= 0:
        p = 1.0 / (1.0 + math.exp(-s))
    else:
        e = math.exp(s)
        p = e / (1.0 + e)
    return min(max(p, P_MIN), P_MAX)


def _log_loss(p: float, y: int) -> float:
    p = min(max(p, LOSS_EPS), 1.0 - LOSS_EPS)
    return -math.log(p) if y == 1 else -math.log(1.0 - p)


def predict(m: CvrModel, h: HashedRow) -> float:
    """Return the conversion probability of a hashed row, strictly inside (0, 1)."""
    s = 0.0
    for i in h.indices:
        s += float(m.w[i])
    return _sigmoid(s)


def sgd_update(m: CvrModel, h: HashedRow, p: float) -> CvrModel:
    """Apply one online step in place for prediction ``p``; returns ``m``.

    Duplicate slots are updated once per occurrence, each using the count
    before its own increment.
    """
    gradient = p - h.label
    for i in h.indices:
        m.w[i] -= m.alpha * gradient / math.sqrt(int(m.n[i]) + 1)
        m.n[i] += 1
    m.rows_trained += 1
    return m


def train(
    m: CvrModel,
    data: CampaignDataset,
    *,
    window: int = LOSS_WINDOW,
) -> TrainResult:
    """Make one pass over ``data`` in row order and return the trained copy of ``m``."""
    if window < 1:
        raise InvalidArgument(f"window must be positive, got {window}")
    model = m.copy()
    w: list[float] = model.w.tolist()
    n: list[int] = model.n.tolist()
    alpha = model.alpha
    losses: list[float] = []
    window_loss = 0.0
    window_rows = 0
    for start in range(0, len(data), CHUNK_ROWS):
        chunk = data.take(slice(start, start + CHUNK_ROWS))
        for row, y in zip(hash_dataset(chunk, model.D, model.salted).tolist(), chunk.conversions.tolist()):
            s = 0.0
            for i in row:
                s += w[i]
            p = _sigmoid(s)
            gradient = p - y
            for i in row:
                w[i] -= alpha * gradient / math.sqrt(n[i] + 1)
                n[i] += 1
            window_loss += _log_loss(p, y)
            window_rows += 1
            if window_rows == window:
                losses.append(window_loss / window_rows)
                _LOGGER.info("trained %d rows, window log loss %.5f", model.rows_trained + len(losses) * window, losses[-1])
                window_loss = 0.0
                window_rows = 0
    if window_rows:
        losses.append(window_loss / window_rows)
    model.w = np.array(w, dtype=np.float64)
    model.n = np.array(n, dtype=np.uint64)
    model.rows_trained += len(data)
    return TrainResult(model, losses, window)


def predict_probabilities(m: CvrModel, data: CampaignDataset) -> np.ndarray:
    """Return the conversion probability of every row without touching the model."""
    out = np.empty(len(data))
    for start in range(0, len(data), CHUNK_ROWS):
        chunk = data.take(slice(start, start + CHUNK_ROWS))
        s = m.w[hash_dataset(chunk, m.D, m.salted)].sum(axis=1)
        positive = s >= 0
        e = np.exp(-np.abs(s))
        p = np.where(positive, 1.0 / (1.0 + e), e / (1.0 + e))
        out[start:start + len(chunk)] = np.clip(p, P_MIN, P_MAX)
    return out


def predict_all(m: CvrModel, data: CampaignDataset) -> CampaignDataset:
    """Return ``data`` with its cvr column filled by the model."""
    return data.with_cvr(predict_probabilities(m, data))


def save_model(m: CvrModel, path: str | Path) -> Path:
    """Write a little-endian checkpoint: magic, header, then w and n."""
    path = Path(path)
    header = np.zeros(1, dtype=_HEADER)
    header["version"] = CHECKPOINT_VERSION
    header["flags"] = FLAG_SALTED if m.salted else 0
    header["D"] = m.D
    header["alpha"] = m.alpha
    header["rows"] = m.rows_trained
    with open(path, "wb") as handle:
        handle.write(CHECKPOINT_MAGIC)
        handle.write(header.tobytes())
        handle.write(m.w.astype("<f8").tobytes())
        handle.write(m.n.astype("<u8").tobytes())
    _LOGGER.debug("saved model (D=%d, %d rows trained) to %s", m.D, m.rows_trained, path)
    return path


def load_model(path: str | Path) -> CvrModel:
    """Read a checkpoint written by :func:`save_model`."""
    data = Path(path).read_bytes()
    offset = len(CHECKPOINT_MAGIC)
    if data[:offset] != CHECKPOINT_MAGIC or len(data) < offset + _HEADER.itemsize:
        raise CheckpointError(f"{path} is not a model checkpoint")
    header = np.frombuffer(data, dtype=_HEADER, count=1, offset=offset)[0]
    if int(header["version"]) != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {int(header['version'])}")
    D = int(header["D"])
    offset += _HEADER.itemsize
    expected = offset + 16 * D
    if len(data) != expected:
        raise CheckpointError(f"{path}: expected {expected} bytes for D={D}, found {len(data)}")
    w = np.frombuffer(data, dtype="<f8", count=D, offset=offset).astype(np.float64)
    n = np.frombuffer(data, dtype="<u8", count=D, offset=offset + 8 * D).astype(np.uint64)
    if not np.all(np.isfinite(w)):
        raise CheckpointError(f"{path}: non-finite weights")
    try:
        return CvrModel(
            D=D,
            alpha=float(header["alpha"]),
            salted=bool(int(header["flags"]) & FLAG_SALTED),
            w=w,
            n=n,
            rows_trained=int(header["rows"]),
        )
    except InvalidArgument as err:
        raise CheckpointError(f"{path}: {err}") from err
