"""Snapshot CSV files, JSON-lines diagnostics and convergence tables.

Every writer goes through a temporary file in the target directory followed
by an atomic rename, so an interrupted run never leaves a partial file.
"""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .driver import FIELDS, TwoScaleState
from .errors import SnapshotFormatError

SNAPSHOT_HEADER = ["field", "macro_index", "micro_index", "value", "time"]
TABLE_HEADER = [
    "level", "h", "dt", "err_w1", "err_w2", "err_w3", "err_w4",
    "order_w1", "order_w2", "order_w3", "order_w4",
]


def atomic_write(path, text: str) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def snapshot_text(state: TwoScaleState) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SNAPSHOT_HEADER)
    t = repr(float(state.t))
    for name in FIELDS:
        a = np.asarray(state.field(name), dtype=float)
        if a.ndim == 1:
            for k, v in enumerate(a):
                w.writerow([name, k, -1, repr(float(v)), t])
        else:
            for k in range(a.shape[0]):
                for j, v in enumerate(a[k]):
                    w.writerow([name, k, j, repr(float(v)), t])
    return buf.getvalue()


def write_snapshot(state: TwoScaleState, path) -> None:
    """One row per nodal value, ordered by field, macro index, micro index."""
    atomic_write(path, snapshot_text(state))


def read_snapshot(path) -> TwoScaleState:
    """Exact inverse of :func:`write_snapshot` on finite values."""
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise SnapshotFormatError(f"cannot read {path}: {exc.strerror}") from None
    entries = {name: [] for name in FIELDS}
    times = set()
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != SNAPSHOT_HEADER:
            raise SnapshotFormatError(f"bad header {header!r}", row=1)
        for row_no, row in enumerate(reader, start=2):
            if len(row) != 5:
                raise SnapshotFormatError(f"expected 5 columns, got {len(row)}", row=row_no)
            name, k, j, v, t = row
            if name not in entries:
                raise SnapshotFormatError(f"unknown field {name!r}", row=row_no)
            try:
                k, j, v, t = int(k), int(j), float(v), float(t)
            except ValueError:
                raise SnapshotFormatError("non-numeric entry", row=row_no) from None
            if k < 0 or j < -1 or (name == "w3") != (j == -1):
                raise SnapshotFormatError("index out of range", row=row_no)
            entries[name].append((k, j, v, row_no))
            times.add(t)
    if len(times) != 1:
        raise SnapshotFormatError("rows carry differing time stamps")
    arrays = {}
    for name, rows in entries.items():
        if not rows:
            raise SnapshotFormatError(f"no rows for field {name}")
        nk = max(r[0] for r in rows) + 1
        if name == "w3":
            shape = (nk,)
        else:
            shape = (nk, max(r[1] for r in rows) + 1)
        a = np.full(shape, np.nan)
        for k, j, v, row_no in rows:
            idx = k if name == "w3" else (k, j)
            if not np.isnan(a[idx]):
                raise SnapshotFormatError("duplicate entry", row=row_no)
            a[idx] = v
        if np.isnan(a).any():
            raise SnapshotFormatError(f"field {name} has missing entries")
        arrays[name] = a
    return TwoScaleState(t=times.pop(), **arrays)


def write_trajectory(snapshots, directory, prefix="snapshot") -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, s in enumerate(snapshots):
        p = directory / f"{prefix}_{i:05d}.csv"
        write_snapshot(s, p)
        paths.append(p)
    return paths


def write_diagnostics(records, path) -> None:
    """One JSON object per line."""
    atomic_write(path, "".join(json.dumps(r, sort_keys=True) + "\n" for r in records))


def read_diagnostics(path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def write_table(rows, path) -> None:
    """Convergence table; missing orders are written as empty cells."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TABLE_HEADER)
    for r in rows:
        w.writerow(["" if r.get(c) is None else (repr(r[c]) if isinstance(r[c], float) else r[c])
                    for c in TABLE_HEADER])
    atomic_write(path, buf.getvalue())
