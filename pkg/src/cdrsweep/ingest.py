"""Raw CDR parsing, 10-minute per-sector aggregation, and window extraction.

The raw input is delimiter-separated text, one record per line:

    square_id <sep> slot_start_ms [<sep> country_code
        [<sep> sms_in <sep> sms_out <sep> call_in <sep> call_out <sep> internet]]

Activity fields may be empty; a line with no activity value at all is not a
CDR event and is reported, not counted. Aggregation buckets events into
consecutive 600-second slots for the four sectors A..D of one cell.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime, timezone

import numpy as np

from .errors import (
    EmptyInputError,
    SeriesFormatError,
    SeriesTooShortError,
    UnknownSquareError,
)

SECTOR_LABELS = ("A", "B", "C", "D")
SLOT_MS = 600_000
ACTIVITY_NAMES = ("sms_in", "sms_out", "call_in", "call_out", "internet")
# square_id, slot_start, country code, then the five activity fields
_MAX_FIELDS = 3 + len(ACTIVITY_NAMES)


@dataclass
class RawCdrRecord:
    square_id: int
    slot_start_ms: int
    # one entry per ACTIVITY_NAMES position; None where the field was empty
    activities: tuple

    def activity_sum(self) -> float:
        return sum(a for a in self.activities if a is not None)


@dataclass
class ParseIssue:
    line_no: int
    reason: str


@dataclass
class ParseResult:
    records: list[RawCdrRecord]
    issues: list[ParseIssue] = field(default_factory=list)


def parse_raw(lines, field_delimiter: str = "\t") -> ParseResult:
    """Parse delimiter-separated CDR lines.

    Malformed lines become ParseIssue entries carrying their 1-based line
    number; they are never silently dropped. Raises EmptyInputError when the
    input contains no non-blank lines at all.
    """
    if isinstance(lines, str):
        lines = lines.splitlines()

    records: list[RawCdrRecord] = []
    issues: list[ParseIssue] = []
    saw_line = False

    for line_no, line in enumerate(lines, start=1):
        stripped = line.rstrip("\r\n")
        if not stripped.strip():
            continue
        saw_line = True

        parts = stripped.split(field_delimiter)
        if len(parts) < 2:
            issues.append(ParseIssue(line_no, "fewer than 2 fields"))
            continue
        if len(parts) > _MAX_FIELDS:
            issues.append(ParseIssue(line_no, f"more than {_MAX_FIELDS} fields"))
            continue

        try:
            square_id = int(parts[0].strip())
        except ValueError:
            issues.append(ParseIssue(line_no, f"bad square id {parts[0]!r}"))
            continue
        if square_id <= 0:
            issues.append(ParseIssue(line_no, f"square id must be positive, got {square_id}"))
            continue

        try:
            slot_start = int(parts[1].strip())
        except ValueError:
            issues.append(ParseIssue(line_no, f"bad timestamp {parts[1]!r}"))
            continue
        if slot_start < 0:
            issues.append(ParseIssue(line_no, f"negative timestamp {slot_start}"))
            continue
        if slot_start % SLOT_MS != 0:
            # normalize to the containing 10-minute slot, but say so
            floored = slot_start - slot_start % SLOT_MS
            issues.append(ParseIssue(
                line_no, f"timestamp {slot_start} not slot-aligned; floored to {floored}"))
            slot_start = floored

        # parts[2] is the country code; ignored
        raw_activities = parts[3:_MAX_FIELDS]
        activities = []
        bad = False
        for name, text in zip(ACTIVITY_NAMES, raw_activities):
            text = text.strip()
            if not text:
                activities.append(None)
                continue
            try:
                value = float(text)
            except ValueError:
                issues.append(ParseIssue(line_no, f"bad {name} value {text!r}"))
                bad = True
                break
            if not np.isfinite(value) or value < 0:
                issues.append(ParseIssue(line_no, f"{name} must be finite and >= 0, got {text}"))
                bad = True
                break
            activities.append(value)
        if bad:
            continue
        activities.extend([None] * (len(ACTIVITY_NAMES) - len(activities)))

        if all(a is None for a in activities):
            issues.append(ParseIssue(line_no, "no activity fields; not a CDR event"))
            continue

        records.append(RawCdrRecord(square_id, slot_start, tuple(activities)))

    if not saw_line:
        raise EmptyInputError("input contains no lines")
    return ParseResult(records=records, issues=issues)


@dataclass
class SectorMap:
    """Bijection between the four grid squares of one cell and sectors A..D."""

    by_square: dict

    def __post_init__(self):
        if len(self.by_square) != 4:
            raise ValueError(f"sector map needs exactly 4 squares, got {len(self.by_square)}")
        if sorted(self.by_square.values()) != sorted(SECTOR_LABELS):
            raise ValueError(f"sector labels must be exactly {SECTOR_LABELS}")

    @classmethod
    def from_squares(cls, square_ids) -> "SectorMap":
        """Map four square ids to A, B, C, D in the order given."""
        ids = list(square_ids)
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate square ids in {ids}")
        return cls(by_square=dict(zip(ids, SECTOR_LABELS)))

    def sector_index(self, square_id: int) -> int:
        try:
            return SECTOR_LABELS.index(self.by_square[square_id])
        except KeyError:
            raise UnknownSquareError(f"unknown square id {square_id}") from None


@dataclass
class SectorSeries:
    """Gap-free per-sector counts on a fixed 10-minute grid.

    counts[i][s] covers [t0_ms + i*slot_len_ms, t0_ms + (i+1)*slot_len_ms) for
    sector SECTOR_LABELS[s]. Slots without any record hold explicit zeros.
    """

    t0_ms: int
    counts: np.ndarray
    slot_len_ms: int = SLOT_MS

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.ndim != 2 or self.counts.shape[1] != len(SECTOR_LABELS):
            raise ValueError(f"counts must be (S, 4), got {self.counts.shape}")
        if np.any(self.counts < 0):
            raise ValueError("counts must be non-negative")

    @property
    def n_slots(self) -> int:
        return self.counts.shape[0]

    def slot_time_ms(self, i: int) -> int:
        return self.t0_ms + i * self.slot_len_ms

    def gap_slots(self) -> list:
        """Indices of slots with no activity in any sector."""
        return [int(i) for i in np.flatnonzero(~self.counts.any(axis=1))]


def aggregate(records, sector_map: SectorMap, count_mode: str = "record_count") -> SectorSeries:
    """Bucket records into a SectorSeries.

    record_count counts one per record (the default); activity_sum adds up
    the present activity values and rounds each cell to the nearest integer
    (ties to even). Slots between the first and last record with no events
    are materialized as zeros.
    """
    if count_mode not in ("record_count", "activity_sum"):
        raise ValueError(f"unknown count_mode {count_mode!r}")
    records = list(records)
    if not records:
        raise EmptyInputError("no records to aggregate")

    t0 = min(r.slot_start_ms for r in records)
    t_last = max(r.slot_start_ms for r in records)
    n_slots = (t_last - t0) // SLOT_MS + 1

    acc = np.zeros((n_slots, len(SECTOR_LABELS)), dtype=np.float64)
    for r in records:
        s = sector_map.sector_index(r.square_id)
        i = (r.slot_start_ms - t0) // SLOT_MS
        if count_mode == "record_count":
            acc[i, s] += 1
        else:
            acc[i, s] += r.activity_sum()

    counts = acc.astype(np.int64) if count_mode == "record_count" else np.rint(acc).astype(np.int64)
    return SectorSeries(t0_ms=t0, counts=counts)


@dataclass
class WindowedDataset:
    """Sliding supervised sequences: window_len input slots, 1 slot ahead.

    inputs[i] holds counts rows [i, i + window_len); targets[i] is row
    i + window_len. The first split_index sequences are the chronological
    training split.
    """

    window_len: int
    inputs: np.ndarray   # (n, window_len, 4) float64
    targets: np.ndarray  # (n, 4) float64
    split_index: int
    horizon: int = 1

    @property
    def n_sequences(self) -> int:
        return self.inputs.shape[0]

    @property
    def n_train(self) -> int:
        return self.split_index

    @property
    def n_test(self) -> int:
        return self.n_sequences - self.split_index

    def train_arrays(self):
        return self.inputs[:self.split_index], self.targets[:self.split_index]

    def test_arrays(self):
        return self.inputs[self.split_index:], self.targets[self.split_index:]


def make_windows(series: SectorSeries, window_len: int, train_fraction: float) -> WindowedDataset:
    """Slide a window of window_len slots over the series with stride 1.

    Produces n_slots - window_len sequences and splits them chronologically:
    split_index = floor(train_fraction * n_sequences). Both splits must end
    up non-empty.
    """
    if window_len < 1:
        raise ValueError(f"window_len must be positive, got {window_len}")
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must be in (0, 1), got {train_fraction}")

    n_seq = series.n_slots - window_len
    if n_seq < 1:
        raise SeriesTooShortError(
            f"{series.n_slots} slots cannot fit a {window_len}-slot window plus a target")

    split_index = int(train_fraction * n_seq)
    if split_index < 1 or split_index >= n_seq:
        raise SeriesTooShortError(
            f"{n_seq} sequences split at {split_index} leaves an empty split")

    data = series.counts.astype(np.float64)
    inputs = np.stack([data[i:i + window_len] for i in range(n_seq)])
    targets = data[window_len:window_len + n_seq].copy()
    return WindowedDataset(window_len=window_len, inputs=inputs, targets=targets,
                           split_index=split_index)


def _format_ts(ms: int) -> str:
    dt = datetime.fromtimestamp(ms // 1000, tz=timezone.utc)
    return dt.strftime("%Y-%m-%dT%H:%M:%SZ")


def _parse_ts(text: str) -> int:
    cleaned = text.strip().replace(" ", "T")
    if cleaned.endswith("Z"):
        cleaned = cleaned[:-1] + "+00:00"
    try:
        dt = datetime.fromisoformat(cleaned)
    except ValueError:
        raise SeriesFormatError(f"bad timestamp {text!r}") from None
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return int(dt.timestamp()) * 1000


def write_sector_series(series: SectorSeries) -> str:
    """Render the normalized CSV: header time,A,B,C,D then one row per slot."""
    lines = ["time," + ",".join(SECTOR_LABELS)]
    for i in range(series.n_slots):
        row = ",".join(str(int(v)) for v in series.counts[i])
        lines.append(f"{_format_ts(series.slot_time_ms(i))},{row}")
    return "\n".join(lines) + "\n"


def load_sector_series(text: str) -> SectorSeries:
    """Parse the normalized CSV back into a SectorSeries.

    Validates the header, the 600-second stride and non-negative integer
    counts; write_sector_series followed by load_sector_series is the
    identity.
    """
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise EmptyInputError("series file is empty")
    header = lines[0].strip()
    if header != "time," + ",".join(SECTOR_LABELS):
        raise SeriesFormatError(f"unexpected header {header!r}")
    if len(lines) < 2:
        raise EmptyInputError("series file has no data rows")

    t0 = None
    counts = []
    for row_no, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != 1 + len(SECTOR_LABELS):
            raise SeriesFormatError(f"row {row_no}: expected 5 columns, got {len(parts)}")
        ts = _parse_ts(parts[0])
        if t0 is None:
            t0 = ts
        elif ts != t0 + (row_no - 2) * SLOT_MS:
            raise SeriesFormatError(f"row {row_no}: timestamp {parts[0]} breaks the 600 s grid")
        try:
            values = [int(v) for v in parts[1:]]
        except ValueError:
            raise SeriesFormatError(f"row {row_no}: non-integer count") from None
        if any(v < 0 for v in values):
            raise SeriesFormatError(f"row {row_no}: negative count")
        counts.append(values)

    return SectorSeries(t0_ms=t0, counts=np.array(counts, dtype=np.int64))
