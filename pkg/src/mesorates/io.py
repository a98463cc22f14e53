"""Result containers and deterministic output writing."""

from __future__ import annotations

import csv
import io
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence


@dataclass
class Table:
    columns: list[str]
    rows: list[Sequence[Any]] = field(default_factory=list)

    def add(self, *row) -> None:
        if len(row) != len(self.columns):
            raise ValueError(f"row has {len(row)} fields, table has {len(self.columns)}")
        self.rows.append(row)

    def column(self, name: str) -> list:
        i = self.columns.index(name)
        return [r[i] for r in self.rows]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for r in self.rows:
            w.writerow([_cell(v) for v in r])
        return buf.getvalue()


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    if isinstance(v, (list, tuple, set, frozenset)):
        return ";".join(sorted(str(x) for x in v))
    return str(v)


@dataclass
class ResultBundle:
    """Summary document plus named CSV tables.

    Table keys are the axis labels; files are written as
    ``{experiment}-{key}.csv``. ``unreliable`` marks runs whose censored
    fraction exceeded the threshold.
    """

    experiment: str
    summary: dict
    tables: dict[str, Table] = field(default_factory=dict)
    unreliable: bool = False


def jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, (set, frozenset)):
        return sorted(jsonable(v) for v in obj)
    if hasattr(obj, "item") and not isinstance(obj, (str, bytes)):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None if math.isnan(obj) else ("inf" if obj > 0 else "-inf")
    return obj


def axis_label(value) -> str:
    """File-name fragment for a sweep value, stable across runs."""
    if isinstance(value, float):
        s = f"{value:.6g}"
        return s.replace("+", "")
    return str(value)


def write_outputs(bundle: ResultBundle, out_dir) -> list[Path]:
    """Write every table and ``summary.json``; on failure remove what was written."""
    out = Path(out_dir)
    written: list[Path] = []
    try:
        out.mkdir(parents=True, exist_ok=True)
        for key in sorted(bundle.tables):
            path = out / f"{bundle.experiment}-{key}.csv"
            _write_text(path, bundle.tables[key].to_csv())
            written.append(path)
        path = out / "summary.json"
        text = json.dumps(jsonable(bundle.summary), indent=2, sort_keys=True) + "\n"
        _write_text(path, text)
        written.append(path)
    except OSError:
        for p in written:
            try:
                p.unlink()
            except OSError:
                pass
        raise
    return written


def _write_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".part")
    try:
        with open(tmp, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    finally:
        if tmp.exists():
            tmp.unlink()
