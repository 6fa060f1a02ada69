"""Dataset ingestion and atomic output writing.

Binary format: the 8-byte magic ``SUPKDE01``, then ``n`` and ``d`` as
little-endian uint64, then ``n*d`` little-endian float64 values in
column-major order (all of column 1, then column 2, ...).
"""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

MAGIC = b"SUPKDE01"
_HEADER = np.dtype([("magic", "S8"), ("n", "<u8"), ("d", "<u8")])


class IngestionError(ValueError):
    pass


def read_csv(path: str | os.PathLike) -> np.ndarray:
    """``n x d`` matrix from a CSV file; a non-numeric first row is a header."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise IngestionError(f"cannot read {path}: {exc.strerror or exc}") from None
    rows = [r for r in csv.reader(io.StringIO(text)) if r and any(c.strip() for c in r)]
    if not rows:
        raise IngestionError(f"{path}: no data rows")
    start = 0
    try:
        [float(c) for c in rows[0]]
    except ValueError:
        start = 1
    d = len(rows[start]) if len(rows) > start else 0
    out = []
    for lineno, r in enumerate(rows[start:], start=start + 1):
        if len(r) != d:
            raise IngestionError(f"{path}: row {lineno} has {len(r)} fields, expected {d}")
        try:
            vals = [float(c) for c in r]
        except ValueError:
            raise IngestionError(f"{path}: row {lineno} has a non-numeric field") from None
        if not all(np.isfinite(vals)):
            raise IngestionError(f"{path}: row {lineno} has a non-finite value")
        out.append(vals)
    if not out:
        raise IngestionError(f"{path}: header but no data rows")
    return np.array(out, dtype=float)


def read_binary(path: str | os.PathLike) -> np.ndarray:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise IngestionError(f"cannot read {path}: {exc.strerror or exc}") from None
    if len(raw) < _HEADER.itemsize or raw[:8] != MAGIC:
        raise IngestionError(f"{path}: missing {MAGIC.decode()} header")
    head = np.frombuffer(raw[: _HEADER.itemsize], dtype=_HEADER)[0]
    n, d = int(head["n"]), int(head["d"])
    body = raw[_HEADER.itemsize :]
    if len(body) != 8 * n * d:
        raise IngestionError(f"{path}: header says {n}x{d} values but body holds {len(body)} bytes")
    X = np.frombuffer(body, dtype="<f8").reshape((d, n)).T.astype(float)
    if not np.all(np.isfinite(X)):
        raise IngestionError(f"{path}: non-finite value in body")
    return X


def write_binary(path: str | os.PathLike, X: np.ndarray) -> None:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    head = np.array([(MAGIC, X.shape[0], X.shape[1])], dtype=_HEADER).tobytes()
    atomic_write_bytes(path, head + np.asarray(X.T, dtype="<f8").tobytes())


def read_data(path: str | os.PathLike) -> np.ndarray:
    """Dispatch on content: binary files start with the magic bytes."""
    try:
        with open(path, "rb") as fh:
            start = fh.read(8)
    except OSError as exc:
        raise IngestionError(f"cannot read {path}: {exc.strerror or exc}") from None
    return read_binary(path) if start == MAGIC else read_csv(path)


def write_csv_matrix(path, X: np.ndarray, header: Sequence[str] | None = None) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if header:
        w.writerow(header)
    for row in np.asarray(X, dtype=float):
        w.writerow([repr(float(v)) for v in row])
    atomic_write_text(path, buf.getvalue())


# outputs ------------------------------------------------------------------


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode())


def to_json_text(obj) -> str:
    return json.dumps(obj, indent=2, default=_json_default) + "\n"


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def rows_to_csv(rows: Iterable[dict]) -> str:
    rows = list(rows)
    buf = io.StringIO()
    if rows:
        w = csv.DictWriter(buf, fieldnames=list(rows[0].keys()), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: "" if v is None else (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    return buf.getvalue()


class OutputSet:
    """Stages several outputs and publishes them only when all are ready."""

    def __init__(self) -> None:
        self._items: list[tuple[Path, bytes]] = []

    def add_json(self, path, obj) -> None:
        if path is not None:
            self._items.append((Path(path), to_json_text(obj).encode()))

    def add_text(self, path, text: str) -> None:
        if path is not None:
            self._items.append((Path(path), text.encode()))

    def commit(self) -> list[str]:
        staged = []
        try:
            for path, data in self._items:
                path.parent.mkdir(parents=True, exist_ok=True)
                fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
                with os.fdopen(fd, "wb") as fh:
                    fh.write(data)
                staged.append((tmp, path))
        except BaseException:
            for tmp, _ in staged:
                os.unlink(tmp)
            raise
        for tmp, path in staged:
            os.replace(tmp, path)
        return [str(p) for _, p in staged]
