from __future__ import annotations

import csv

from ..objectives.train import METRIC_FIELDS


def format_float(v) -> str:
    # 17 significant digits round-trip every float64; '.' regardless of locale
    return format(float(v), ".17g")


def write_metrics(path, history, fields=METRIC_FIELDS) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(fields)
        for row in history:
            w.writerow([str(int(row[f])) if f == "step" else format_float(row[f]) for f in fields])


def read_metrics(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [{k: (int(v) if k == "step" else float(v)) for k, v in r.items()} for r in rows]
