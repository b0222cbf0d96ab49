"""CSV and checkpoint output for a finished experiment.

Every CSV has a fixed header. Floats are written with ``repr`` so they parse
back to the same value and never depend on locale; missing values are empty.
"""

from __future__ import annotations

import csv
from pathlib import Path

from .models import write_checkpoint

METRICS_COLUMNS = (
    "round",
    "mean_accuracy",
    "min_accuracy",
    "max_accuracy",
    "uploaded_bytes",
    "downloaded_bytes",
    "cumulative_uploaded_bytes",
)
SELECTION_COLUMNS = (
    "round",
    "client_id",
    "modality_id",
    "raw_shapley",
    "norm_shapley",
    "size_bytes",
    "norm_size",
    "priority",
    "selected",
)
ATTRIBUTION_COLUMNS = ("round", "client_id", "modality_id", "mean_abs_shapley")


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(path, columns, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_cell(row[c]) for c in columns])


def read_csv(path, columns) -> list[dict]:
    """Strict reader: the header must match ``columns`` exactly."""
    with open(path, newline="", encoding="utf-8") as fh:
        r = csv.reader(fh)
        header = tuple(next(r))
        if header != tuple(columns):
            raise ValueError(f"{path}: expected columns {columns}, found {header}")
        rows = []
        for line in r:
            if len(line) != len(columns):
                raise ValueError(f"{path}: row has {len(line)} fields, expected {len(columns)}")
            rows.append(dict(zip(columns, line)))
    return rows


def metrics_rows(result) -> list[dict]:
    return [{c: getattr(m, c) for c in METRICS_COLUMNS} for m in result.metrics]


def checkpoint_path(out_dir, round_index: int, modality_id: int) -> Path:
    return Path(out_dir) / "checkpoints" / f"round_{round_index:03d}" / f"modality_{modality_id}.bin"


def write_checkpoints(result, out_dir) -> None:
    for t, state in enumerate(result.globals):
        for m, params in sorted(state.global_models.items()):
            p = checkpoint_path(out_dir, t, m)
            p.parent.mkdir(parents=True, exist_ok=True)
            write_checkpoint(params, p)


def write_run(result, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "metrics.csv", METRICS_COLUMNS, metrics_rows(result))
    write_csv(out / "selection.csv", SELECTION_COLUMNS, result.selection_log)
    write_csv(out / "attribution.csv", ATTRIBUTION_COLUMNS, result.attribution_log)
    write_checkpoints(result, out)
