"""
Helpers for structured, per-run experiment logging.
Metrics go to CSV files; the latest run's summary goes to a JSON file that is
overwritten on every run.
"""

from __future__ import annotations

import csv
import json
import logging
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence

import numpy as np

RUN_SUMMARY_FILE = "run_summary.json"

logger = logging.getLogger(__name__)


def _cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_csv(path: Path, columns: Sequence[str], rows: Iterable[Dict[str, Any]]) -> Path:
    """Writes rows with a fixed column order; missing values become empty cells."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_cell(row.get(col)) for col in columns])
    return path


def write_array_csv(path: Path, array: np.ndarray, prefix: str = "x", labels: Optional[np.ndarray] = None) -> Path:
    """One row per sample: x0, x1, ... plus an optional label column."""
    array = np.atleast_2d(array)
    columns = [f"{prefix}{j}" for j in range(array.shape[1])]
    if labels is not None:
        columns.append("label")
    rows = []
    for i, item in enumerate(array):
        row = dict(zip(columns, item.tolist()))
        if labels is not None:
            row["label"] = int(labels[i])
        rows.append(row)
    return write_csv(path, columns, rows)


def read_csv(path: Path) -> List[Dict[str, str]]:
    with Path(path).open("r", newline="", encoding="utf-8") as handle:
        return list(csv.DictReader(handle))


def write_run_summary(output_dir: Path, payload: Dict[str, Any]) -> Optional[Path]:
    """
    Persist the latest run to run_summary.json (overwrites on every call).
    Useful for checking which config, seed and outputs a directory holds.
    """
    path = Path(output_dir) / RUN_SUMMARY_FILE
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        payload = {"timestamp": datetime.now(timezone.utc).isoformat(), **payload}
        path.write_text(json.dumps(payload, indent=2, default=str), encoding="utf-8")
        return path
    except Exception as exc:  # pragma: no cover - logging only
        logger.warning("[RUN_LOG] Failed to write run summary: %s", exc)
        return None
