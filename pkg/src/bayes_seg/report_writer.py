import os
import threading
from collections import defaultdict
from contextlib import suppress
from statistics import fmean
from typing import Any

import pyarrow as pa
import pyarrow.csv as pa_csv

METRICS_SCHEMA = pa.schema(
    [
        pa.field("image", pa.string(), nullable=False),
        pa.field("algorithm", pa.string(), nullable=False),
        pa.field("n", pa.int64(), nullable=False),
        pa.field("k", pa.int64(), nullable=False),
        pa.field("accuracy", pa.float64(), nullable=True),
        pa.field("seconds", pa.float64(), nullable=False),
        pa.field("sweeps", pa.int64(), nullable=False),
    ]
)

SUITE_SCHEMA = METRICS_SCHEMA.append(pa.field("status", pa.string(), nullable=False)).append(
    pa.field("error", pa.string(), nullable=True)
)

MEAN_IMAGE = "mean"


def _mean_rows(rows: list[dict[str, Any]]) -> list[dict[str, Any]]:
    """One averaged row per algorithm over the successful rows."""
    groups: dict[str, list[dict[str, Any]]] = defaultdict(list)
    for row in rows:
        if row.get("status", "ok") == "ok":
            groups[row["algorithm"]].append(row)

    means = []
    for algorithm in sorted(groups):
        group = groups[algorithm]
        accuracies = [r["accuracy"] for r in group if r["accuracy"] is not None]
        means.append(
            {
                "image": MEAN_IMAGE,
                "algorithm": algorithm,
                "n": round(fmean(r["n"] for r in group)),
                "k": round(fmean(r["k"] for r in group)),
                "accuracy": fmean(accuracies) if accuracies else None,
                "seconds": fmean(r["seconds"] for r in group),
                "sweeps": round(fmean(r["sweeps"] for r in group)),
                "status": "mean",
                "error": None,
            }
        )
    return means


class MetricsWriter:
    """Collects metric rows from any thread and writes them once as CSV."""

    def __init__(
        self,
        path: str,
        schema: pa.Schema = METRICS_SCHEMA,
        *,
        mean_rows: bool = False,
    ) -> None:
        self.path = path
        self.schema = schema
        self.mean_rows = mean_rows

        self.buffer: list[dict[str, Any]] = []

        self._lock = threading.Lock()
        self._closed = False
        self._close_stats: dict[str, int | str] | None = None

        parent = os.path.dirname(self.path)
        if parent:
            os.makedirs(parent, exist_ok=True)

    def _current_stats(self) -> dict[str, int | str]:
        return {"total_rows": len(self.buffer), "path": self.path}

    def add_row(self, row: dict[str, Any]) -> None:
        if self._closed:
            raise RuntimeError("cannot add rows after writer has been closed")
        with self._lock:
            self.buffer.append(row)

    def _write_unsafe(self) -> None:
        """Write buffered rows (plus means) to the CSV file. Caller holds the lock."""
        rows = list(self.buffer)
        if self.mean_rows:
            rows.extend(_mean_rows(rows))
        columns = set(self.schema.names)
        table = pa.Table.from_pylist(
            [{key: value for key, value in row.items() if key in columns} for row in rows],
            schema=self.schema,
        )
        tmp_path = self.path + ".tmp"
        try:
            pa_csv.write_csv(
                table, tmp_path, write_options=pa_csv.WriteOptions(quoting_style="needed")
            )
            os.replace(tmp_path, self.path)
        finally:
            with suppress(FileNotFoundError):
                os.remove(tmp_path)

    def close(self) -> dict[str, int | str]:
        """Write the CSV and return statistics. Idempotent."""
        with self._lock:
            if self._closed:
                return self._close_stats or self._current_stats()
            try:
                self._write_unsafe()
                self._close_stats = self._current_stats()
                return self._close_stats
            finally:
                self._closed = True
