"""Pageview ingestion: dump parsing, manifests, 21-day event windows and peaks."""
import csv
import gzip
import logging
import re
import urllib.parse
from collections import Counter
from dataclasses import dataclass, field
from datetime import date, datetime, timedelta, timezone
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

from peaklab.errors import (
    DataQualityError,
    MalformedLineError,
    ParameterError,
    SchemaError,
)
from peaklab.parallel import run_parallel

logger = logging.getLogger(__name__)

DAYS_BEFORE = 10
DAYS_AFTER = 10
WINDOW_HOURS = (DAYS_BEFORE + 1 + DAYS_AFTER) * 24
PEAK_SEARCH_HOURS = 48
POPULARITY_THRESHOLD = 100.0
MAX_MISSING_FRACTION = 0.2

MANIFEST_COLUMNS = ("article", "redirects", "category", "event_date", "result", "stage", "opponent")
CATEGORIES = ("election", "sports", "football", "film", "holiday")
RESULTS = ("win", "draw", "lose")
STAGES = ("group", "knockout", "final")

_DUMP_STAMP = re.compile(r"(\d{8})-(\d{2})(\d{4})")


def normalize_title(title):
    return urllib.parse.unquote(title.strip()).replace(" ", "_")


def utc_midnight(day):
    return datetime(day.year, day.month, day.day, tzinfo=timezone.utc)


def floor_hour(moment):
    if moment.tzinfo is None:
        moment = moment.replace(tzinfo=timezone.utc)
    return moment.astimezone(timezone.utc).replace(minute=0, second=0, microsecond=0)


@dataclass(frozen=True, eq=False)
class TimeSeries:
    start: datetime
    counts: np.ndarray
    missing_hours: int = 0

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.ndim != 1 or counts.size == 0:
            raise ParameterError("a time series needs a non-empty 1-D count array")
        if np.any(counts < 0):
            raise ParameterError("hourly counts must be nonnegative")
        counts = counts.copy()
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "start", floor_hour(self.start))

    def __len__(self):
        return int(self.counts.size)

    @property
    def values(self):
        return self.counts.astype(float)

    @property
    def total(self):
        return int(self.counts.sum())

    def hour_index(self, moment):
        delta = floor_hour(moment) - self.start
        return int(delta.total_seconds() // 3600)

    def timestamp(self, index):
        return self.start + timedelta(hours=int(index))


@dataclass(frozen=True)
class Outcome:
    result: Optional[str] = None
    stage: Optional[str] = None
    opponent: Optional[str] = None


@dataclass(frozen=True)
class EventRecord:
    article: str
    category: str
    event_date: date
    redirects: Tuple[str, ...] = ()
    outcome: Optional[Outcome] = None

    def __post_init__(self):
        if not self.article:
            raise ParameterError("event article must be non-empty")

    @property
    def key(self):
        return f"{self.article}@{self.event_date.isoformat()}"

    @property
    def titles(self):
        return (self.article,) + tuple(self.redirects)

    @property
    def window_start(self):
        return utc_midnight(self.event_date) - timedelta(days=DAYS_BEFORE)

    def has_match_result(self):
        return bool(self.outcome and self.outcome.result and self.outcome.opponent)


@dataclass(frozen=True)
class PeakLocation:
    t_p: int
    peak_value: int


@dataclass(frozen=True)
class EventWindow:
    event: EventRecord
    series: TimeSeries
    peak: PeakLocation


@dataclass
class HourlyCounts:
    """Views keyed by (title, hour) plus the set of hours the source covers."""

    counts: Counter = field(default_factory=Counter)
    covered: set = field(default_factory=set)
    malformed: int = 0

    def add(self, title, hour, views):
        self.counts[(title, hour)] += int(views)

    def cover(self, hour):
        self.covered.add(hour)

    def merge(self, other):
        self.counts.update(other.counts)
        self.covered |= other.covered
        self.malformed += other.malformed
        return self

    def get(self, title, hour):
        return self.counts.get((title, hour), 0)


def parse_dump_line(line, project="en"):
    """Parse one ``domain title count bytes`` record.

    Returns ``(domain, title, count)`` or ``None`` when the domain is another
    project. Raises MalformedLineError for records that do not parse.
    """
    parts = line.split()
    if len(parts) != 4:
        raise MalformedLineError(f"expected 4 fields, got {len(parts)}: {line.strip()!r}")
    domain, title, count, _ = parts
    if domain != project:
        return None
    try:
        views = int(count)
    except ValueError as exc:
        raise MalformedLineError(f"non-integer view count: {line.strip()!r}") from exc
    if views < 0:
        raise MalformedLineError(f"negative view count: {line.strip()!r}")
    return domain, title, views


def dump_hour(path):
    """Hour label of a Wikimedia hourly dump file, from its file name."""
    match = _DUMP_STAMP.search(Path(path).name)
    if not match:
        raise SchemaError(f"cannot read an hour stamp from dump file name {Path(path).name}")
    day, hour, _ = match.groups()
    return datetime.strptime(day + hour, "%Y%m%d%H").replace(tzinfo=timezone.utc)


def _open_text(path):
    if str(path).endswith(".gz"):
        return gzip.open(path, "rt", encoding="utf-8", errors="replace")
    return open(path, "r", encoding="utf-8", errors="replace")


def read_dump_file(path, project="en", titles=None):
    hour = dump_hour(path)
    counts = HourlyCounts()
    counts.cover(hour)
    with _open_text(path) as handle:
        for line in handle:
            if not line.strip():
                continue
            try:
                record = parse_dump_line(line, project)
            except MalformedLineError:
                counts.malformed += 1
                continue
            if record is None:
                continue
            title = normalize_title(record[1])
            if titles is not None and title not in titles:
                continue
            counts.add(title, hour, record[2])
    return counts


def read_dump_dir(dump_dir, project="en", titles=None, workers=1):
    paths = sorted(
        path
        for path in Path(dump_dir).iterdir()
        if path.is_file() and _DUMP_STAMP.search(path.name)
    )
    partials = run_parallel(
        lambda path: read_dump_file(path, project, titles), paths, workers, "dump"
    )
    merged = HourlyCounts()
    for partial in partials:
        merged.merge(partial)
    if merged.malformed:
        logger.warning("dump_parse malformed_lines=%d files=%d", merged.malformed, len(paths))
    return merged


def title_file_name(title):
    return normalize_title(title).replace("/", "%2F") + ".csv"


def read_series_csv(path):
    """Read a ``utc_hour,views`` CSV into (hour, views) pairs.

    A row with an unparseable hour or a non-integer or negative view count
    raises MalformedLineError naming the file and line.
    """
    with open(path, newline="", encoding="utf-8") as handle:
        numbered = [(no, line) for no, line in enumerate(handle, start=1) if not line.startswith("#")]
    reader = csv.DictReader(line for _, line in numbered)
    if reader.fieldnames is None or not {"utc_hour", "views"} <= set(reader.fieldnames):
        raise SchemaError(f"{path} must have columns utc_hour,views", ("utc_hour", "views"))
    rows = []
    for row in reader:
        line_no = numbered[reader.line_num - 1][0]
        try:
            hour = floor_hour(datetime.fromisoformat(row["utc_hour"].strip().replace("Z", "+00:00")))
            views = int(row["views"])
        except (AttributeError, TypeError, ValueError) as exc:
            raise MalformedLineError(
                f"{path} line {line_no}: bad utc_hour/views {row.get('utc_hour')!r},{row.get('views')!r}"
            ) from exc
        if views < 0:
            raise MalformedLineError(f"{path} line {line_no}: negative view count {views}")
        rows.append((hour, views))
    return rows


def read_series_dir(series_dir, titles):
    """Per-title ``<title>.csv`` files into HourlyCounts; rows present mark covered hours."""
    source = HourlyCounts()
    for title in sorted(titles):
        path = Path(series_dir) / title_file_name(title)
        if not path.exists():
            continue
        for hour, views in read_series_csv(path):
            source.add(title, hour, views)
            source.cover(hour)
    return source


def series_rows(series):
    return [
        (series.timestamp(index).strftime("%Y-%m-%dT%H:00:00Z"), int(views))
        for index, views in enumerate(series.counts)
    ]


def _parse_outcome(row, line_no):
    result = (row.get("result") or "").strip().lower() or None
    stage = (row.get("stage") or "").strip().lower() or None
    opponent = (row.get("opponent") or "").strip() or None
    if result is not None and result not in RESULTS:
        raise SchemaError(f"manifest line {line_no}: result must be one of {RESULTS}, got {result!r}")
    if stage is not None and stage not in STAGES:
        raise SchemaError(f"manifest line {line_no}: stage must be one of {STAGES}, got {stage!r}")
    if result is None and stage is None and opponent is None:
        return None
    return Outcome(result=result, stage=stage, opponent=normalize_title(opponent) if opponent else None)


def read_manifest(path):
    """Events from a manifest CSV; comment lines starting with ``#`` are skipped."""
    with open(path, newline="", encoding="utf-8") as handle:
        numbered = [(no, line) for no, line in enumerate(handle, start=1) if not line.startswith("#")]
    reader = csv.DictReader(line for _, line in numbered)
    fields = reader.fieldnames or []
    missing = [column for column in MANIFEST_COLUMNS if column not in fields]
    if missing:
        raise SchemaError(
            f"manifest {path} is missing columns: {', '.join(missing)}", missing
        )
    events = []
    for row in reader:
        line_no = numbered[reader.line_num - 1][0]
        redirects = tuple(
            normalize_title(item) for item in (row["redirects"] or "").split("|") if item.strip()
        )
        try:
            event_date = date.fromisoformat(row["event_date"].strip())
        except ValueError as exc:
            raise SchemaError(
                f"manifest line {line_no}: bad event_date {row['event_date']!r}", ("event_date",)
            ) from exc
        events.append(
            EventRecord(
                article=normalize_title(row["article"]),
                category=row["category"].strip().lower(),
                event_date=event_date,
                redirects=redirects,
                outcome=_parse_outcome(row, line_no),
            )
        )
    return events


def manifest_row(event):
    outcome = event.outcome or Outcome()
    return {
        "article": event.article,
        "redirects": "|".join(event.redirects),
        "category": event.category,
        "event_date": event.event_date.isoformat(),
        "result": outcome.result or "",
        "stage": outcome.stage or "",
        "opponent": outcome.opponent or "",
    }


def write_manifest(path, events, header=""):
    """Write a manifest CSV; ``header`` is an optional leading comment line."""
    with open(path, "w", newline="", encoding="utf-8") as handle:
        handle.write(header)
        writer = csv.DictWriter(handle, fieldnames=MANIFEST_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for event in events:
            writer.writerow(manifest_row(event))


def build_window(event, source, max_missing=MAX_MISSING_FRACTION):
    """The 504-hour window around ``event``, summed over the article and its redirects.

    Hours the source does not cover are zero-filled and counted. A window with
    more than ``max_missing`` of its hours missing raises DataQualityError.
    """
    start = event.window_start
    counts = np.zeros(WINDOW_HOURS, dtype=np.int64)
    missing = 0
    for index in range(WINDOW_HOURS):
        hour = start + timedelta(hours=index)
        if hour not in source.covered:
            missing += 1
            continue
        counts[index] = sum(source.get(title, hour) for title in event.titles)
    if missing > max_missing * WINDOW_HOURS:
        raise DataQualityError(
            f"{event.key}: {missing}/{WINDOW_HOURS} hours missing "
            f"(limit {max_missing:.0%})"
        )
    if missing:
        logger.info("window_zero_fill event=%s missing_hours=%d", event.key, missing)
    return TimeSeries(start=start, counts=counts, missing_hours=missing)


def locate_peak(series, event_date, span=PEAK_SEARCH_HOURS):
    """Hour of maximal views in the ``span`` hours from 0:00 UTC on ``event_date``.

    Ties go to the earliest hour.
    """
    offset = series.hour_index(utc_midnight(event_date))
    if offset < 0 or offset + span > len(series):
        raise ParameterError(
            f"series does not cover the {span}-hour peak search span from {event_date}"
        )
    segment = series.counts[offset : offset + span]
    t_p = offset + int(np.argmax(segment))
    return PeakLocation(t_p=t_p, peak_value=int(series.counts[t_p]))


def filter_popular(windows, threshold=POPULARITY_THRESHOLD):
    """Keep windows whose peak strictly exceeds ``threshold`` views/hour."""
    retained = [window for window in windows if window.peak.peak_value > threshold]
    dropped = len(windows) - len(retained)
    if dropped:
        logger.info("popularity_filter threshold=%s retained=%d dropped=%d", threshold, len(retained), dropped)
    return retained


def ingest_events(events, source, threshold=POPULARITY_THRESHOLD, max_missing=MAX_MISSING_FRACTION):
    """Apply the window, peak and popularity rules end to end.

    Returns ``(retained windows, exclusions)`` where exclusions are
    ``(event_key, reason, detail)`` rows.
    """
    windows = []
    exclusions = []
    for event in events:
        try:
            series = build_window(event, source, max_missing)
        except DataQualityError as exc:
            exclusions.append((event.key, "missing_data", str(exc)))
            continue
        peak = locate_peak(series, event.event_date)
        windows.append(EventWindow(event=event, series=series, peak=peak))
    retained = filter_popular(windows, threshold)
    kept = {window.event.key for window in retained}
    for window in windows:
        if window.event.key not in kept:
            exclusions.append(
                (window.event.key, "below_threshold", f"peak_value={window.peak.peak_value}")
            )
    return retained, exclusions
