"""Artifact files under the output directory.

CSV files start with a ``# config_hash=... seed=...`` comment line; JSON files
carry the same two keys; JSON-lines files open with a header record. Readers
skip these and raise DependencyError naming the command that produces a
missing artifact.
"""
import csv
import json
import math
from datetime import date, datetime
from pathlib import Path

from peaklab.baselines import PowerLawParams, SpikeMFit, SpikeMParams
from peaklab.config import config_hash
from peaklab.errors import DependencyError, SchemaError
from peaklab.fitting import PeakFit
from peaklab.ingestion import (
    MANIFEST_COLUMNS,
    EventRecord,
    EventWindow,
    Outcome,
    PeakLocation,
    TimeSeries,
    manifest_row,
    read_series_csv,
    series_rows,
    title_file_name,
)

EVENTS_FILE = "events.csv"
SERIES_DIR = "series"
FITS_FILE = "fits.jsonl"
SPIKEM_FITS_FILE = "spikem_fits.jsonl"
POWERLAW_FITS_FILE = "powerlaw_fits.jsonl"
WINDOW_COLUMNS = MANIFEST_COLUMNS + ("start", "t_p", "peak_value", "missing_hours")

# Which command writes each artifact.
PRODUCERS = {
    EVENTS_FILE: "ingest",
    FITS_FILE: "fit",
    SPIKEM_FITS_FILE: "fit --method spikem",
    POWERLAW_FITS_FILE: "fit --method powerlaw",
}


def format_value(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return "nan" if math.isnan(value) else repr(value)
    if value is None:
        return ""
    return str(value)


def header_line(config):
    return f"# config_hash={config_hash(config)} seed={config.seed}\n"


def _json_default(value):
    if isinstance(value, (date, datetime)):
        return value.isoformat()
    if hasattr(value, "tolist"):
        return value.tolist()
    raise TypeError(f"cannot serialize {type(value).__name__}")


def _clean(value):
    """NaN and infinities become null so the JSON stays strict."""
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, dict):
        return {key: _clean(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(item) for item in value]
    return value


def dumps(data):
    return json.dumps(_clean(data), sort_keys=True, default=_json_default, allow_nan=False)


def write_csv(path, fieldnames, rows, config):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as handle:
        handle.write(header_line(config))
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(fieldnames)
        for row in rows:
            writer.writerow([format_value(row.get(name)) for name in fieldnames])
    return path


def _require(path, command=None):
    path = Path(path)
    if not path.exists():
        raise DependencyError(path.name, command or PRODUCERS.get(path.name, "ingest"))
    return path


def read_csv(path, command=None):
    path = _require(path, command)
    with path.open(newline="", encoding="utf-8") as handle:
        return list(csv.DictReader(line for line in handle if not line.startswith("#")))


def write_json(path, data, config):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = dict(data, config_hash=config_hash(config), seed=config.seed)
    text = json.dumps(_clean(payload), sort_keys=True, indent=2, default=_json_default, allow_nan=False)
    path.write_text(text + "\n", encoding="utf-8")
    return path


def read_json(path, command=None):
    return json.loads(_require(path, command).read_text(encoding="utf-8"))


def write_jsonl(path, records, config):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as handle:
        handle.write(dumps({"header": {"config_hash": config_hash(config), "seed": config.seed}}) + "\n")
        for record in records:
            handle.write(dumps(record) + "\n")
    return path


def read_jsonl(path, command=None):
    path = _require(path, command)
    records = []
    with path.open(encoding="utf-8") as handle:
        for line in handle:
            if not line.strip():
                continue
            record = json.loads(line)
            if "header" not in record:
                records.append(record)
    return records


def series_file(out_dir, event):
    return Path(out_dir) / SERIES_DIR / title_file_name(event.key)


def save_windows(out_dir, windows, config):
    """events.csv plus one ``utc_hour,views`` CSV per event."""
    rows = []
    for window in windows:
        row = manifest_row(window.event)
        row.update(
            start=window.series.start.strftime("%Y-%m-%dT%H:00:00Z"),
            t_p=window.peak.t_p,
            peak_value=window.peak.peak_value,
            missing_hours=window.series.missing_hours,
        )
        rows.append(row)
        write_csv(
            series_file(out_dir, window.event),
            ("utc_hour", "views"),
            [dict(utc_hour=hour, views=views) for hour, views in series_rows(window.series)],
            config,
        )
    return write_csv(Path(out_dir) / EVENTS_FILE, WINDOW_COLUMNS, rows, config)


def _event_from_row(row):
    outcome = None
    if row.get("result") or row.get("stage") or row.get("opponent"):
        outcome = Outcome(result=row.get("result") or None, stage=row.get("stage") or None,
                          opponent=row.get("opponent") or None)
    return EventRecord(
        article=row["article"],
        category=row["category"],
        event_date=date.fromisoformat(row["event_date"]),
        redirects=tuple(item for item in (row.get("redirects") or "").split("|") if item),
        outcome=outcome,
    )


def load_windows(out_dir):
    rows = read_csv(Path(out_dir) / EVENTS_FILE)
    windows = []
    for row in rows:
        missing = [name for name in WINDOW_COLUMNS if name not in row]
        if missing:
            raise SchemaError(f"{EVENTS_FILE} is missing columns: {', '.join(missing)}", missing)
        event = _event_from_row(row)
        path = _require(series_file(out_dir, event), "ingest")
        pairs = read_series_csv(path)
        series = TimeSeries(
            start=datetime.fromisoformat(row["start"].replace("Z", "+00:00")),
            counts=[views for _, views in pairs],
            missing_hours=int(row["missing_hours"]),
        )
        peak = PeakLocation(t_p=int(row["t_p"]), peak_value=int(row["peak_value"]))
        windows.append(EventWindow(event=event, series=series, peak=peak))
    return windows


def _keyed(window, payload):
    event = window.event
    return dict(key=event.key, article=event.article, event_date=event.event_date.isoformat(),
                category=event.category, **payload)


def save_fits(path, windows, fits, config):
    """One PeakFit per event; events whose fit failed get ``fit: null`` and an error."""
    records = []
    for window in windows:
        fit = fits.get(window.event.key)
        if isinstance(fit, PeakFit):
            records.append(_keyed(window, {"fit": fit.to_dict()}))
        else:
            records.append(_keyed(window, {"fit": None, "error": str(fit or "no fit")}))
    return write_jsonl(path, records, config)


def load_fits(path):
    return {record["key"]: PeakFit.from_dict(record["fit"]) for record in read_jsonl(path) if record.get("fit")}


def save_spikem_fits(path, windows, fits, config):
    records = [
        _keyed(w, {"params": fits[w.event.key].params.to_dict(), "r2": fits[w.event.key].r2,
                   "converged": fits[w.event.key].converged})
        for w in windows if w.event.key in fits
    ]
    return write_jsonl(path, records, config)


def load_spikem_fits(path):
    return {
        record["key"]: SpikeMFit(
            params=SpikeMParams.from_dict(record["params"]),
            r2=float("nan") if record.get("r2") is None else float(record["r2"]),
            converged=bool(record["converged"]),
        )
        for record in read_jsonl(path)
    }


def save_powerlaw_fits(path, windows, fits, config):
    records = [_keyed(w, {"params": fits[w.event.key].to_dict()}) for w in windows if w.event.key in fits]
    return write_jsonl(path, records, config)


def load_powerlaw_fits(path):
    return {record["key"]: PowerLawParams(**record["params"]) for record in read_jsonl(path)}
