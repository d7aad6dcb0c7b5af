"""CSV input with optional whitening, and atomic CSV/JSON output."""

from __future__ import annotations

import csv
import json
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidInputError
from .models import Dataset

__all__ = [
    "Whitening",
    "load_csv",
    "emit_table",
    "emit_json",
    "format_number",
]


@dataclass(frozen=True)
class Whitening:
    """Per-column affine map z = (x - mean) / sd."""

    mean: np.ndarray
    sd: np.ndarray

    def apply(self, x):
        return (np.asarray(x, dtype=float) - self.mean) / self.sd

    def invert(self, z):
        return np.asarray(z, dtype=float) * self.sd + self.mean

    def to_dict(self):
        return {"mean": self.mean.tolist(), "sd": self.sd.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["mean"], dtype=float), np.asarray(d["sd"], dtype=float))


def _is_number(cell):
    try:
        float(cell)
    except ValueError:
        return False
    return True


def load_csv(path, whiten: bool = False, sidecar: bool = True):
    """Read a rectangular numeric CSV (a non-numeric first row is a header).

    Returns ``(dataset, whitening)``; ``whitening`` is None unless ``whiten``.
    When whitening, the transform is also written next to the file as
    ``<path>.whitening.json`` (unless ``sidecar`` is False).
    """
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if rows and not all(_is_number(c) for c in rows[0]):
        rows = rows[1:]
    if not rows:
        raise InvalidInputError(f"{path}: no data rows")
    width = len(rows[0])
    for i, r in enumerate(rows):
        if len(r) != width:
            raise InvalidInputError(f"{path}: row {i + 1} has {len(r)} cells, expected {width}")
        for c in r:
            if not _is_number(c):
                raise InvalidInputError(f"{path}: non-numeric cell {c!r} in row {i + 1}")
    x = np.array([[float(c) for c in r] for r in rows])
    if not np.all(np.isfinite(x)):
        raise InvalidInputError(f"{path}: non-finite values")
    if not whiten:
        return Dataset(x), None
    sd = x.std(axis=0, ddof=1) if x.shape[0] > 1 else np.zeros(width)
    if np.any(sd == 0):
        raise InvalidInputError(f"{path}: cannot whiten a constant column")
    w = Whitening(x.mean(axis=0), sd)
    if sidecar:
        emit_json(w.to_dict(), str(path) + ".whitening.json")
    return Dataset(w.apply(x)), w


def format_number(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _atomic_write(path, text: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def emit_table(rows, path, header=None):
    """Write rows as RFC-4180 CSV via a temporary file and a rename."""
    import io as _io

    buf = _io.StringIO()
    writer = csv.writer(buf, lineterminator="\r\n")
    if header is not None:
        writer.writerow(header)
    for r in rows:
        writer.writerow([format_number(v) for v in np.atleast_1d(r).tolist()]
                        if isinstance(r, np.ndarray) else [format_number(v) for v in r])
    _atomic_write(path, buf.getvalue())


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def emit_json(obj, path):
    _atomic_write(path, json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")
