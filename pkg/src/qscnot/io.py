"""Count files and result bundles."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .analyzer import AnalyzerSetting
from .detection import CountRecord

SCHEMA_VERSION = 1
COUNT_COLUMNS = ("setting_id", "qwp1", "hwp1", "qwp2", "hwp2", "total", "accidental", "singles1", "singles2")
COUNT_MAGIC = "# qscnot-counts"


class CountFileError(ValueError):
    pass


def export_counts(records, path=None, n_gates: int | None = None) -> str:
    """Comma-separated count file: a schema header line, a column header, one row per setting.

    Angles are written with ``repr`` so an export/import round trip is exact.
    """
    if n_gates is None:
        n_gates = max((r.n_gates for r in records), default=0)
    lines = [f"{COUNT_MAGIC} schema_version={SCHEMA_VERSION} n_gates={n_gates}", ",".join(COUNT_COLUMNS)]
    for r in records:
        s = r.setting
        lines.append(",".join([s.id, repr(float(s.qwp1)), repr(float(s.hwp1)), repr(float(s.qwp2)),
                               repr(float(s.hwp2)), str(r.total), str(r.accidental),
                               str(r.singles1), str(r.singles2)]))
    text = "\n".join(lines) + "\n"
    if path is not None:
        Path(path).write_text(text)
    return text


def import_counts(source) -> list[CountRecord]:
    """Parse a count file (path or text)."""
    text = source if isinstance(source, str) and "\n" in source else Path(source).read_text()
    lines = text.splitlines()
    if not lines or not lines[0].startswith(COUNT_MAGIC):
        raise CountFileError("missing count-file header")
    meta = dict(part.split("=", 1) for part in lines[0][len(COUNT_MAGIC):].split() if "=" in part)
    if meta.get("schema_version") != str(SCHEMA_VERSION):
        raise CountFileError(f"unsupported schema version {meta.get('schema_version')!r}")
    n_gates = int(meta.get("n_gates", 0))
    rows = list(csv.reader(lines[1:]))
    if not rows or tuple(rows[0]) != COUNT_COLUMNS:
        raise CountFileError("unexpected column header")
    out = []
    for i, row in enumerate(rows[1:], start=3):
        if len(row) != len(COUNT_COLUMNS):
            raise CountFileError(f"line {i}: expected {len(COUNT_COLUMNS)} fields")
        try:
            setting = AnalyzerSetting(row[0], *(float(x) for x in row[1:5]))
            out.append(CountRecord(setting, *(int(x) for x in row[5:9]), n_gates=n_gates))
        except ValueError as exc:
            raise CountFileError(f"line {i}: {exc}") from exc
    return out


def _round(x: float) -> float:
    if not math.isfinite(x):
        raise ValueError("non-finite number in result")
    return float(f"{x:.15g}")


def jsonable(obj):
    """Plain JSON types with floats at 15 significant digits; complex arrays become
    row-major lists of [re, im] pairs."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        if np.iscomplexobj(obj):
            return [[[_round(z.real), _round(z.imag)] for z in row] for row in np.atleast_2d(obj)]
        return jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return _round(float(obj))
    if isinstance(obj, complex):
        return [_round(obj.real), _round(obj.imag)]
    if obj is None or isinstance(obj, str):
        return obj
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def record_dict(r: CountRecord) -> dict:
    s = r.setting
    return {"setting_id": s.id, "qwp1": s.qwp1, "hwp1": s.hwp1, "qwp2": s.qwp2, "hwp2": s.hwp2,
            "total": r.total, "accidental": r.accidental, "singles1": r.singles1, "singles2": r.singles2,
            "n_gates": r.n_gates}


def dumps_bundle(bundle: dict) -> str:
    return json.dumps(jsonable(bundle), indent=1, sort_keys=True) + "\n"


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([f"{v:.15g}" if isinstance(v, float) else v for v in row])
