"""RFC-4180 CSV output for training metrics, growth events and racing logs."""

from __future__ import annotations

import csv
import math
import os
from typing import Dict, Iterable, List, Sequence


def format_value(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        if math.isnan(v):
            return ""
        return repr(v)
    return str(v)


class CsvSink:
    """Append rows with a fixed header; the header is written once per file."""

    def __init__(self, path, fields: Sequence[str], append: bool = False):
        self.path = path
        self.fields = list(fields)
        exists = append and os.path.exists(path) and os.path.getsize(path) > 0
        self._fh = open(path, "a" if exists else "w", newline="", encoding="utf-8")
        self._writer = csv.writer(self._fh, lineterminator="\r\n")
        if not exists:
            self._writer.writerow(self.fields)
            self._fh.flush()

    def __call__(self, row: Dict) -> None:
        self._writer.writerow([format_value(row.get(f)) for f in self.fields])
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def write_rows(path, fields: Sequence[str], rows: Iterable[Dict]) -> None:
    with CsvSink(path, fields) as sink:
        for row in rows:
            sink(row)


def read_rows(path) -> List[Dict[str, str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def truncate_after(path, env_step: int) -> None:
    """Drop rows past ``env_step`` so a resumed run can append where the checkpoint left off."""
    if not os.path.exists(path):
        return
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        rows = list(reader)
    if header is None:
        return
    col = header.index("env_step")
    kept = [r for r in rows if int(r[col]) <= env_step]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(header)
        w.writerows(kept)
