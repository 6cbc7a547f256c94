import argparse
import csv
import math
from collections import defaultdict


def read_rows(filename):
    """Rows of a peaklab CSV; ``#`` header comments are skipped."""
    with open(filename, mode="r", newline="", encoding="utf-8") as f:
        rows = list(csv.DictReader(line for line in f if not line.startswith("#")))
    for row in rows:
        for key, value in row.items():
            try:
                row[key] = float(value)
            except (ValueError, TypeError):
                row[key] = str(value)
    return rows


def sort_key(field):
    # NaN and text sort after every number
    def key(row):
        value = row[field]
        if isinstance(value, float) and not math.isnan(value):
            return (0, value, "")
        return (1, 0.0, str(value))

    return key


def group_means(rows, group_by, field):
    groups = defaultdict(list)
    for row in rows:
        value = row[field]
        if isinstance(value, float) and not math.isnan(value):
            groups[tuple(row[name] for name in group_by)].append(value)
    out = []
    for key, values in groups.items():
        row = dict(zip(group_by, key))
        row["n"] = float(len(values))
        row[f"mean_{field}"] = sum(values) / len(values)
        out.append(row)
    return out


def print_table(rows, headers):
    col_widths = {h: max([len(str(row[h])) for row in rows] + [len(h)]) for h in headers}
    header_str = " | ".join(f"{h:<{col_widths[h]}}" for h in headers)
    print(header_str)
    print("-" * len(header_str))
    for row in rows:
        line = []
        for h in headers:
            val = row[h]
            if isinstance(val, float):
                line.append(f"{str(val):>{col_widths[h]}}")
            else:
                line.append(f"{str(val):<{col_widths[h]}}")
        print(" | ".join(line))


def analyze_csv(filename, sort_field, reverse, count, group_by=None):
    try:
        rows = read_rows(filename)
    except FileNotFoundError:
        print(f"Error: File '{filename}' not found.")
        return
    if not rows:
        print("CSV file is empty.")
        return

    missing = [name for name in [sort_field] + list(group_by or []) if name not in rows[0]]
    if missing:
        print(f"Error: Field '{missing[0]}' does not exist.")
        return

    if group_by:
        rows = group_means(rows, group_by, sort_field)
        sort_field = f"mean_{sort_field}"
    headers = list(rows[0].keys())
    ordered = sorted(rows, key=sort_key(sort_field), reverse=reverse)
    print_table(ordered[:count], headers)


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description="Forecast metrics CSV analyzer")
    parser.add_argument("--field", nargs="?", default="ape_ts", help="Field to sort by")
    parser.add_argument("--order", nargs="?", default="asc", choices=["asc", "desc"], help="Sort order")
    parser.add_argument("--file", required=True, help="Path to CSV file")
    parser.add_argument("--count", type=int, default=5, help="Number of results to show")
    parser.add_argument("--group-by", default="", help="Comma list of columns to average over, e.g. method,t_obs")

    args = parser.parse_args()
    group_by = [name.strip() for name in args.group_by.split(",") if name.strip()]

    analyze_csv(args.file, args.field, args.order == "desc", args.count, group_by)
