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

"""Impression records, campaign datasets and attribution-log ingestion.

A :class:`CampaignDataset` is columnar: one numpy array per field, frozen
after construction so it can be shared read-only between search workers.
"""
from __future__ import annotations

import gzip
import logging
import math
import re
from collections.abc import Iterable, Iterator, Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .exceptions import DataError, InvalidArgument, RowError, SchemaError

__all__ = [
    "ALL_CAMPAIGNS",
    "ATTRIBUTE_COLUMNS",
    "N_ATTRIBUTES",
    "CampaignDataset",
    "ImpressionRecord",
    "LoadResult",
    "SliceReport",
    "load_log",
    "make_campaign_slices",
    "read_log",
    "sample_rows",
    "save_log",
    "slice_report",
    "split_train_test",
]

_LOGGER = logging.getLogger(__name__)

N_ATTRIBUTES = 9
ALL_CAMPAIGNS = -1
ATTRIBUTE_COLUMNS = tuple(f"cat{i}" for i in range(1, N_ATTRIBUTES + 1))
BASE_FIELDS = ("timestamp", "campaign", "conversion", "cost")
OPTIONAL_FIELDS = ("click", "cpo", "cvr", "profitability")
ERROR_TOLERANCE = 0.01
CHUNK_ROWS = 1_000_000

RowIndex = np.ndarray | Sequence[int] | slice


def _frozen(value: object, dtype: object) -> np.ndarray:
    """Return a read-only array, copying only when the input is writeable."""
    arr = np.asarray(value, dtype=dtype)
    if arr.flags.writeable:
        arr = arr.copy()
        arr.setflags(write=False)
    return arr


def _optional(value: float) -> float | None:
    return None if math.isnan(value) else float(value)


@dataclass(frozen=True)
class ImpressionRecord:
    """One displayed advert."""

    timestamp: int
    campaign_id: int
    conversion: int
    cost: float
    attributes: tuple[int, ...]
    click: int = 0
    cpo: float | None = None
    cvr: float | None = None
    profitability: float | None = None

    def __post_init__(self) -> None:
        """Validate labels and scores."""
        if self.conversion not in (0, 1):
            raise InvalidArgument(f"conversion must be 0 or 1, got {self.conversion}")
        if self.click not in (0, 1):
            raise InvalidArgument(f"click must be 0 or 1, got {self.click}")
        if self.cvr is not None and not 0.0 <= self.cvr <= 1.0:
            raise InvalidArgument(f"cvr outside [0, 1]: {self.cvr}")
        if self.profitability is not None and not (
            math.isfinite(self.profitability) and self.profitability >= 0
        ):
            raise InvalidArgument(f"invalid profitability: {self.profitability}")


@dataclass(frozen=True, eq=False)
class CampaignDataset:
    """Time-ordered, immutable collection of impressions."""

    timestamps: np.ndarray
    campaigns: np.ndarray
    conversions: np.ndarray
    clicks: np.ndarray
    costs: np.ndarray
    cpos: np.ndarray
    attributes: np.ndarray
    cvr: np.ndarray | None = None
    profitability: np.ndarray | None = None
    campaign_id: int = ALL_CAMPAIGNS
    name: str = ""

    def __post_init__(self) -> None:
        """Freeze the columns and check the dataset invariants."""
        attributes = np.asarray(self.attributes)
        if attributes.ndim == 1 and attributes.size == 0:
            attributes = attributes.reshape(0, N_ATTRIBUTES)
        if attributes.ndim != 2:
            raise InvalidArgument("attributes must be a 2-D (rows, attributes) array")
        object.__setattr__(self, "attributes", _frozen(attributes, np.int64))
        for name, dtype in (
            ("timestamps", np.int64),
            ("campaigns", np.int64),
            ("conversions", np.int8),
            ("clicks", np.int8),
            ("costs", np.float64),
            ("cpos", np.float64),
        ):
            object.__setattr__(self, name, _frozen(getattr(self, name), dtype))
        for name in ("cvr", "profitability"):
            if getattr(self, name) is not None:
                object.__setattr__(self, name, _frozen(getattr(self, name), np.float64))

        rows = len(self.attributes)
        for name in ("timestamps", "campaigns", "conversions", "clicks", "costs", "cpos", "cvr", "profitability"):
            column = getattr(self, name)
            if column is not None and column.shape != (rows,):
                raise InvalidArgument(f"column {name} has shape {column.shape}, expected ({rows},)")
        if rows > 1 and np.any(np.diff(self.timestamps) < 0):
            raise InvalidArgument("records must be sorted by timestamp")
        if np.any((self.conversions != 0) & (self.conversions != 1)):
            raise InvalidArgument("conversion labels must be 0 or 1")
        if np.any((self.clicks != 0) & (self.clicks != 1)):
            raise InvalidArgument("click labels must be 0 or 1")
        if self.campaign_id != ALL_CAMPAIGNS and np.any(self.campaigns != self.campaign_id):
            raise InvalidArgument(f"rows outside campaign {self.campaign_id}")
        if self.cvr is not None:
            present = self.cvr[~np.isnan(self.cvr)]
            if np.any((present < 0) | (present > 1)):
                raise InvalidArgument("cvr values must lie in [0, 1]")
        if self.profitability is not None:
            present = self.profitability[~np.isnan(self.profitability)]
            if np.any(~np.isfinite(present) | (present < 0)):
                raise InvalidArgument("profitability values must be finite and non-negative")

    @classmethod
    def from_arrays(
        cls,
        attributes: object,
        costs: object,
        *,
        conversions: object = None,
        timestamps: object = None,
        clicks: object = None,
        cpos: object = None,
        cvr: object = None,
        profitability: object = None,
        campaign_id: int = 0,
        name: str = "",
    ) -> CampaignDataset:
        """Build a single-campaign dataset, filling unspecified columns."""
        attrs = np.asarray(attributes, dtype=np.int64)
        if attrs.ndim == 1 and attrs.size == 0:
            attrs = attrs.reshape(0, N_ATTRIBUTES)
        rows = len(attrs)
        return cls(
            timestamps=np.arange(rows) if timestamps is None else timestamps,
            campaigns=np.full(rows, campaign_id),
            conversions=np.zeros(rows) if conversions is None else conversions,
            clicks=np.zeros(rows) if clicks is None else clicks,
            costs=costs,
            cpos=np.full(rows, np.nan) if cpos is None else cpos,
            attributes=attrs,
            cvr=cvr,
            profitability=profitability,
            campaign_id=campaign_id,
            name=name,
        )

    @classmethod
    def from_records(
        cls, records: Iterable[ImpressionRecord], campaign_id: int | None = None
    ) -> CampaignDataset:
        """Build a dataset from records; they are sorted by timestamp."""
        ordered = sorted(records, key=lambda r: r.timestamp)
        campaigns = {r.campaign_id for r in ordered}
        if campaign_id is None:
            campaign_id = campaigns.pop() if len(campaigns) == 1 else ALL_CAMPAIGNS
        width = len(ordered[0].attributes) if ordered else N_ATTRIBUTES
        has_cvr = any(r.cvr is not None for r in ordered)
        has_prof = any(r.profitability is not None for r in ordered)

        def _column(values: list[float | None]) -> np.ndarray:
            return np.array([np.nan if v is None else v for v in values], dtype=np.float64)

        return cls(
            timestamps=[r.timestamp for r in ordered],
            campaigns=[r.campaign_id for r in ordered],
            conversions=[r.conversion for r in ordered],
            clicks=[r.click for r in ordered],
            costs=[r.cost for r in ordered],
            cpos=_column([r.cpo for r in ordered]),
            attributes=np.array([r.attributes for r in ordered], dtype=np.int64).reshape(len(ordered), width),
            cvr=_column([r.cvr for r in ordered]) if has_cvr else None,
            profitability=_column([r.profitability for r in ordered]) if has_prof else None,
            campaign_id=campaign_id,
        )

    @property
    def n_attributes(self) -> int:
        """Return the number of categorical attributes per row."""
        return int(self.attributes.shape[1])

    def __len__(self) -> int:
        return int(self.attributes.shape[0])

    def __getitem__(self, index: int) -> ImpressionRecord:
        """Return one row as an ImpressionRecord."""
        return ImpressionRecord(
            timestamp=int(self.timestamps[index]),
            campaign_id=int(self.campaigns[index]),
            conversion=int(self.conversions[index]),
            cost=float(self.costs[index]),
            attributes=tuple(int(v) for v in self.attributes[index]),
            click=int(self.clicks[index]),
            cpo=_optional(self.cpos[index]),
            cvr=None if self.cvr is None else _optional(self.cvr[index]),
            profitability=None if self.profitability is None else _optional(self.profitability[index]),
        )

    def __iter__(self) -> Iterator[ImpressionRecord]:
        for index in range(len(self)):
            yield self[index]

    def take(
        self,
        rows: RowIndex,
        *,
        campaign_id: int | None = None,
        name: str | None = None,
    ) -> CampaignDataset:
        """Return the selected rows (index array, boolean mask or slice) in time order."""
        if not isinstance(rows, slice):
            rows = np.asarray(rows)
            if rows.dtype != np.bool_:
                rows = np.sort(rows.astype(np.int64))

        def _pick(column: np.ndarray | None) -> np.ndarray | None:
            if column is None:
                return None
            picked = column[rows]
            picked.setflags(write=False)
            return picked

        return CampaignDataset(
            timestamps=_pick(self.timestamps),
            campaigns=_pick(self.campaigns),
            conversions=_pick(self.conversions),
            clicks=_pick(self.clicks),
            costs=_pick(self.costs),
            cpos=_pick(self.cpos),
            attributes=_pick(self.attributes),
            cvr=_pick(self.cvr),
            profitability=_pick(self.profitability),
            campaign_id=self.campaign_id if campaign_id is None else campaign_id,
            name=self.name if name is None else name,
        )

    def head(self, rows: int) -> CampaignDataset:
        """Return the first rows in time order."""
        return self.take(slice(0, max(0, int(rows))))

    def with_cvr(self, cvr: object) -> CampaignDataset:
        """Return a copy carrying predicted CVR; stale profitability is dropped."""
        return self._replace(cvr=cvr, profitability=None)

    def with_profitability(self, profitability: object) -> CampaignDataset:
        """Return a copy carrying a profitability column (NaN marks excluded rows)."""
        return self._replace(profitability=profitability)

    def campaign_sizes(self) -> dict[int, int]:
        """Return the row count of every campaign id."""
        ids, counts = np.unique(self.campaigns, return_counts=True)
        return {int(c): int(n) for c, n in zip(ids, counts)}

    def _replace(self, **changes: object) -> CampaignDataset:
        values = {
            "timestamps": self.timestamps,
            "campaigns": self.campaigns,
            "conversions": self.conversions,
            "clicks": self.clicks,
            "costs": self.costs,
            "cpos": self.cpos,
            "attributes": self.attributes,
            "cvr": self.cvr,
            "profitability": self.profitability,
            "campaign_id": self.campaign_id,
            "name": self.name,
        }
        values.update(changes)
        return CampaignDataset(**values)  # type: ignore[arg-type]


@dataclass
class LoadResult:
    """Dataset plus the rows that ingestion rejected."""

    dataset: CampaignDataset
    rows_read: int
    rejected: list[RowError] = field(default_factory=list)

    @property
    def rows_rejected(self) -> int:
        """Return the number of rejected rows."""
        return len({error.line for error in self.rejected})


def _open_text(path: Path):
    if path.suffix == ".gz":
        return gzip.open(path, "rt", encoding="utf-8")
    return open(path, "r", encoding="utf-8")


def _sniff_header(path: Path) -> tuple[str, list[str]]:
    """Return (delimiter, column names) from the header line."""
    with _open_text(path) as handle:
        header = handle.readline().rstrip("\r\n")
    delimiter = "\t" if "\t" in header else ","
    return delimiter, [name.strip() for name in header.split(delimiter)]


_WHOLE_NUMBER = r"[+-]?\d{1,18}(?:\.0*)?"


def _to_int64(text: pd.Series) -> np.ndarray:
    """Convert validated whole-number strings to int64 without a float round trip."""
    text = text.str.replace(r"\.0*$", "", regex=True)
    values = pd.to_numeric(text).to_numpy()
    if values.dtype.kind not in "iu":
        values = np.fromiter((int(v) for v in text), dtype=np.int64, count=len(text))
    return values.astype(np.int64)


def _parse_column(
    raw: pd.Series,
    column: str,
    first_line: int,
    *,
    integral: bool,
    required: bool,
    errors: list[RowError],
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Parse one text column; return (values, bad mask, missing mask).

    Whole-number columns come back as int64 (missing cells read as 0),
    the others as float64 (missing cells read as NaN).
    """
    text = raw.str.strip()
    missing = (text == "").to_numpy(dtype=bool)
    if integral:
        ok = text.str.fullmatch(_WHOLE_NUMBER).to_numpy(dtype=bool)
        parsed = _to_int64(text.where(ok, "0"))
        bad = ~ok & ~missing
    else:
        parsed = pd.to_numeric(text.where(~missing), errors="coerce").to_numpy(dtype=np.float64)
        bad = (np.isnan(parsed) & ~missing) | np.isinf(parsed)
    if required:
        bad |= missing
    for offset in np.flatnonzero(bad):
        errors.append(RowError(first_line + int(offset), column, f"cannot parse {raw.iloc[offset]!r}"))
    return parsed, bad, missing


def _attribute_fields(header: Sequence[str], schema: Mapping[str, str], n_attributes: int | None) -> tuple[str, ...]:
    """``cat1`` .. ``catN``; with ``n_attributes=None`` N is the highest index the header or schema names."""
    if n_attributes is None:
        renamed = {column: name for name, column in schema.items()}
        names = [renamed.get(column, column) for column in header] + list(schema)
        indices = [int(match.group(1)) for match in map(re.compile(r"cat(\d+)").fullmatch, names) if match]
        n_attributes = max(indices, default=1)
    if n_attributes < 1:
        raise InvalidArgument(f"n_attributes must be positive, got {n_attributes}")
    return tuple(f"cat{i}" for i in range(1, n_attributes + 1))


def read_log(
    path: str | Path,
    schema: Mapping[str, str] | None = None,
    *,
    n_attributes: int | None = N_ATTRIBUTES,
    error_tolerance: float = ERROR_TOLERANCE,
) -> LoadResult:
    """Read a comma- or tab-delimited attribution log.

    ``schema`` maps field names (``timestamp``, ``campaign``, ``cat1`` ...)
    to header names when they differ. The header must carry ``cat1`` ..
    ``cat{n_attributes}``; a missing one is a schema error naming it.
    ``n_attributes=None`` takes the count from the highest ``catN`` the
    header or schema names instead. Rows with a missing categorical cell are rejected; unparseable
    numeric cells are collected as row errors and the load fails only when
    more than ``error_tolerance`` of rows fail.
    """
    path = Path(path)
    schema = dict(schema or {})
    delimiter, header = _sniff_header(path)
    attribute_fields = _attribute_fields(header, schema, n_attributes)
    required_fields = BASE_FIELDS + attribute_fields
    columns = {name: schema.get(name, name) for name in required_fields + OPTIONAL_FIELDS}
    for name in required_fields:
        if columns[name] not in header:
            raise SchemaError(name)
    present = [name for name in required_fields + OPTIONAL_FIELDS if columns[name] in header]
    _LOGGER.debug("reading %s (delimiter %r, columns %s)", path, delimiter, present)

    errors: list[RowError] = []
    missing_rows: list[RowError] = []
    parts: list[dict[str, np.ndarray]] = []
    rows_read = 0
    reader = pd.read_csv(
        path,
        sep=delimiter,
        usecols=[columns[name] for name in present],
        dtype=str,
        keep_default_na=False,
        na_filter=False,
        chunksize=CHUNK_ROWS,
    )
    for chunk in reader:
        first_line = rows_read + 2
        rows_read += len(chunk)
        parsed: dict[str, np.ndarray] = {}
        reject = np.zeros(len(chunk), dtype=bool)
        for name in present:
            values, bad, missing = _parse_column(
                chunk[columns[name]],
                name,
                first_line,
                integral=name in attribute_fields or name in ("timestamp", "campaign", "conversion", "click"),
                required=name in BASE_FIELDS,
                errors=errors,
            )
            reject |= bad
            if name in attribute_fields:
                for offset in np.flatnonzero(missing):
                    missing_rows.append(RowError(first_line + int(offset), name, "missing categorical value"))
                reject |= missing
            parsed[name] = values
        for name, allowed in (("conversion", (0, 1)), ("click", (0, 1))):
            if name in parsed:
                values = parsed[name]
                outside = ~reject & ~np.isin(values, allowed)
                for offset in np.flatnonzero(outside):
                    errors.append(RowError(first_line + int(offset), name, f"label must be 0 or 1, got {values[offset]}"))
                reject |= outside
        negative = ~reject & (parsed["timestamp"] < 0)
        for offset in np.flatnonzero(negative):
            errors.append(RowError(first_line + int(offset), "timestamp", "negative timestamp"))
        reject |= negative
        parts.append({name: values[~reject] for name, values in parsed.items()})

    failed = len({error.line for error in errors})
    if rows_read and failed > error_tolerance * rows_read:
        raise DataError(
            f"{failed} of {rows_read} rows in {path} could not be parsed (first: {errors[0]})",
            errors,
        )
    rejected = sorted(errors + missing_rows)
    if rejected:
        _LOGGER.warning(
            "%s: rejected %d of %d rows (%d unparseable, %d missing categorical values)",
            path,
            len({error.line for error in rejected}),
            rows_read,
            failed,
            len({error.line for error in missing_rows}),
        )

    def _joined(name: str) -> np.ndarray:
        return np.concatenate([part[name] for part in parts]) if parts else np.empty(0)

    timestamps = _joined("timestamp").astype(np.int64)
    order = np.argsort(timestamps, kind="stable")
    campaigns = _joined("campaign").astype(np.int64)[order]
    unique_campaigns = np.unique(campaigns)
    attributes = np.column_stack([_joined(name).astype(np.int64) for name in attribute_fields])
    rows = len(timestamps)
    clicks = _joined("click")[order] if "click" in present else np.zeros(rows)
    dataset = CampaignDataset(
        timestamps=timestamps[order],
        campaigns=campaigns,
        conversions=_joined("conversion")[order].astype(np.int8),
        clicks=clicks.astype(np.int8),
        costs=_joined("cost")[order],
        cpos=_joined("cpo")[order] if "cpo" in present else np.full(rows, np.nan),
        attributes=attributes.reshape(rows, len(attribute_fields))[order],
        cvr=_joined("cvr")[order] if "cvr" in present else None,
        profitability=_joined("profitability")[order] if "profitability" in present else None,
        campaign_id=int(unique_campaigns[0]) if len(unique_campaigns) == 1 else ALL_CAMPAIGNS,
        name=path.name,
    )
    _LOGGER.info("%s: loaded %d rows", path, len(dataset))
    return LoadResult(dataset, rows_read, rejected)


def load_log(
    path: str | Path,
    schema: Mapping[str, str] | None = None,
    *,
    n_attributes: int | None = N_ATTRIBUTES,
    error_tolerance: float = ERROR_TOLERANCE,
) -> CampaignDataset:
    """Load an attribution log into a time-ordered CampaignDataset."""
    return read_log(path, schema, n_attributes=n_attributes, error_tolerance=error_tolerance).dataset


def _format_scores(values: np.ndarray) -> list[str]:
    return ["" if np.isnan(v) else f"{v:.6g}" for v in values]


def save_log(d: CampaignDataset, path: str | Path) -> Path:
    """Write a dataset in the delimited log format.

    Tab-delimited when the name ends in ``.tsv`` or ``.tsv.gz``; ``cvr`` and
    ``profitability`` columns are appended with six significant digits.
    """
    path = Path(path)
    delimiter = "\t" if ".tsv" in path.suffixes else ","
    frame = pd.DataFrame(
        {
            "timestamp": d.timestamps,
            "campaign": d.campaigns,
            "conversion": d.conversions,
            "click": d.clicks,
            "cost": d.costs,
        }
    )
    if not np.all(np.isnan(d.cpos)):
        frame["cpo"] = d.cpos
    for position in range(d.n_attributes):
        frame[f"cat{position + 1}"] = d.attributes[:, position]
    if d.cvr is not None:
        frame["cvr"] = _format_scores(d.cvr)
    if d.profitability is not None:
        frame["profitability"] = _format_scores(d.profitability)
    compression: object = {"method": "gzip", "mtime": 0} if path.suffix == ".gz" else None
    frame.to_csv(path, sep=delimiter, index=False, lineterminator="\n", compression=compression)
    return path


def split_train_test(d: CampaignDataset, train_rows: int) -> tuple[CampaignDataset, CampaignDataset]:
    """Split into the first ``train_rows`` rows and the remainder (time order)."""
    if not 0 < train_rows < len(d):
        raise InvalidArgument(f"train_rows must lie in (0, {len(d)}), got {train_rows}")
    return d.take(slice(0, train_rows)), d.take(slice(train_rows, None))


@dataclass
class SliceReport:
    """Which campaigns yield slices of a given size."""

    slice_size: int
    emitted: list[tuple[int, int]] = field(default_factory=list)
    skipped: int = 0

    @property
    def n_slices(self) -> int:
        """Return the total number of slices emitted."""
        return sum(parts for _, parts in self.emitted)


def slice_report(d: CampaignDataset, slice_size: int) -> SliceReport:
    """Plan the campaign slices: two per campaign with 2x rows, one with 1x."""
    if slice_size <= 0:
        raise InvalidArgument(f"slice_size must be positive, got {slice_size}")
    report = SliceReport(slice_size)
    for campaign, rows in sorted(d.campaign_sizes().items()):
        parts = min(2, rows // slice_size)
        if parts:
            report.emitted.append((campaign, parts))
        else:
            report.skipped += 1
    return report


def make_campaign_slices(d: CampaignDataset, slice_size: int) -> list[CampaignDataset]:
    """Cut single-campaign slices of exactly ``slice_size`` rows."""
    report = slice_report(d, slice_size)
    order = np.argsort(d.campaigns, kind="stable")
    ids, starts = np.unique(d.campaigns[order], return_index=True)
    start_of = {int(c): int(s) for c, s in zip(ids, starts)}
    slices: list[CampaignDataset] = []
    for campaign, parts in report.emitted:
        start = start_of[campaign]
        for part in range(parts):
            rows = order[start + part * slice_size:start + (part + 1) * slice_size]
            slices.append(d.take(rows, campaign_id=campaign, name=f"{campaign}-{part + 1}"))
    _LOGGER.info(
        "cut %d slices of %d rows from %d campaigns; %d campaigns too small",
        report.n_slices,
        slice_size,
        len(report.emitted),
        report.skipped,
    )
    return slices


def sample_rows(d: CampaignDataset, rows: int, seed: int) -> CampaignDataset:
    """Return a uniform random subsample of ``rows`` rows, kept in time order."""
    if not 0 < rows <= len(d):
        raise InvalidArgument(f"rows must lie in (0, {len(d)}], got {rows}")
    rng = np.random.default_rng(seed)
    return d.take(rng.choice(len(d), size=rows, replace=False))
