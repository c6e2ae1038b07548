"""Feature matrices with stable point identities, and their file formats.

Two on-disk formats are understood:

* CSV, one row per point.  An optional header row is recognised when any
  of its fields is non-numeric; if the first header field is ``id`` the
  first column carries integer point identities.
* Raw little-endian binary: the 4-byte magic ``b"CCFS"``, ``u32 m``,
  ``u32 d``, then ``m * d`` float32 values in row-major order.  Binary
  files are memory-mapped, so large matrices are never copied eagerly.
"""

import csv
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._validation import check_matrix
from .exceptions import InvalidInputError

MAGIC = b"CCFS"
_HEADER = struct.Struct("<4sII")


@dataclass(frozen=True)
class FeatureSet:
    """``m`` points in ``d`` dimensions with unique integer ids.

    ``ids`` defaults to ``0 .. m-1``.  Row ``i`` of ``points`` belongs to
    ``ids[i]``.
    """

    points: np.ndarray
    ids: np.ndarray = None
    _sorter: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        points = check_matrix(self.points, "points", min_rows=2)
        m = points.shape[0]
        if self.ids is None:
            ids = np.arange(m, dtype=np.int64)
        else:
            ids = np.asarray(self.ids)
            if ids.shape != (m,):
                raise InvalidInputError(f"ids has shape {ids.shape}, expected ({m},)")
            if ids.dtype.kind not in "iu":
                if ids.dtype.kind == "f" and np.all(np.mod(ids, 1) == 0):
                    ids = ids.astype(np.int64)
                else:
                    raise InvalidInputError("ids must be integers")
            ids = ids.astype(np.int64)
        sorter = np.argsort(ids, kind="stable")
        sorted_ids = ids[sorter]
        if m > 1 and np.any(sorted_ids[1:] == sorted_ids[:-1]):
            dup = sorted_ids[1:][sorted_ids[1:] == sorted_ids[:-1]][0]
            raise InvalidInputError(f"duplicate id {dup}")
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "_sorter", sorter)

    @property
    def m(self):
        return self.points.shape[0]

    @property
    def d(self):
        return self.points.shape[1]

    def rows_for(self, ids):
        """Row indices of ``ids``; unknown ids raise ``InvalidInputError``."""
        ids = np.asarray(ids, dtype=np.int64)
        sorted_ids = self.ids[self._sorter]
        pos = np.searchsorted(sorted_ids, ids)
        pos = np.clip(pos, 0, self.m - 1)
        missing = sorted_ids[pos] != ids
        if np.any(missing):
            raise InvalidInputError(f"unknown id {ids[missing][0]}")
        return self._sorter[pos]

    def subset(self, ids):
        rows = self.rows_for(ids)
        return self.points[rows]


def read_csv(path):
    path = Path(path)
    try:
        handle = open(path, newline="")
    except OSError as exc:
        raise InvalidInputError(f"{path}: cannot open ({exc.strerror})") from None
    with handle:
        rows = list(csv.reader(handle))
    rows = [r for r in rows if r and any(f.strip() for f in r)]
    if not rows:
        raise InvalidInputError(f"{path}: no data rows")

    header = None
    try:
        [float(f) for f in rows[0]]
    except ValueError:
        header = [f.strip() for f in rows.pop(0)]
    has_id = header is not None and header[0].lower() == "id"
    first_line = 2 if header is not None else 1

    width = len(header) if header is not None else len(rows[0])
    values = np.empty((len(rows), width), dtype=np.float64)
    for r, row in enumerate(rows):
        if len(row) != width:
            raise InvalidInputError(
                f"{path}: row {r + first_line} has {len(row)} fields, expected {width}"
            )
        try:
            values[r] = [float(f) for f in row]
        except ValueError as exc:
            raise InvalidInputError(f"{path}: row {r + first_line}: {exc}") from None
        if not np.all(np.isfinite(values[r])):
            raise InvalidInputError(f"{path}: row {r + first_line} has a non-finite value")

    ids = None
    if has_id:
        raw_ids = values[:, 0]
        if np.any(np.mod(raw_ids, 1) != 0):
            r = int(np.argmax(np.mod(raw_ids, 1) != 0))
            raise InvalidInputError(f"{path}: row {r + first_line} has a non-integer id")
        ids = raw_ids.astype(np.int64)
        values = values[:, 1:]
    if values.shape[1] == 0:
        raise InvalidInputError(f"{path}: no feature columns")
    return FeatureSet(values, ids)


def read_binary(path):
    path = Path(path)
    try:
        size = path.stat().st_size
        with open(path, "rb") as handle:
            head = handle.read(_HEADER.size)
    except OSError as exc:
        raise InvalidInputError(f"{path}: cannot open ({exc.strerror})") from None
    if len(head) < _HEADER.size:
        raise InvalidInputError(
            f"{path}: truncated header at byte offset {len(head)} (need {_HEADER.size} bytes)"
        )
    magic, m, d = _HEADER.unpack(head)
    if magic != MAGIC:
        raise InvalidInputError(f"{path}: bad magic {magic!r} at byte offset 0")
    expected = _HEADER.size + 4 * m * d
    if size != expected:
        raise InvalidInputError(
            f"{path}: payload ends at byte offset {size}, header promises {expected}"
        )
    if m == 0 or d == 0:
        raise InvalidInputError(f"{path}: empty matrix (m={m}, d={d}) at byte offset 4")
    points = np.memmap(path, dtype="<f4", mode="r", offset=_HEADER.size, shape=(m, d))
    step = max(1, (1 << 24) // d)
    for start in range(0, m, step):
        bad = ~np.isfinite(points[start:start + step])
        if bad.any():
            r, c = np.argwhere(bad)[0]
            offset = _HEADER.size + 4 * ((start + r) * d + c)
            raise InvalidInputError(
                f"{path}: non-finite value in row {start + r} at byte offset {offset}"
            )
    return FeatureSet(points)


def load_features(path, fmt=None):
    """Read a feature file; ``fmt`` is ``"csv"``, ``"bin"`` or ``None`` (sniff)."""
    if fmt is None:
        try:
            with open(path, "rb") as handle:
                fmt = "bin" if handle.read(4) == MAGIC else "csv"
        except OSError as exc:
            raise InvalidInputError(f"{path}: cannot open ({exc.strerror})") from None
    if fmt == "bin":
        return read_binary(path)
    if fmt == "csv":
        return read_csv(path)
    raise InvalidInputError(f"unknown feature format {fmt!r}")


def write_binary(path, points):
    points = np.ascontiguousarray(points, dtype="<f4")
    m, d = points.shape
    with _atomic_open(path, "wb") as handle:
        handle.write(_HEADER.pack(MAGIC, m, d))
        step = max(1, (1 << 22) // max(d, 1))
        for start in range(0, m, step):
            handle.write(points[start:start + step].tobytes())


def write_csv(path, points, ids=None):
    points = np.asarray(points)
    with _atomic_open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        if ids is not None:
            writer.writerow(["id"] + [f"x{j}" for j in range(points.shape[1])])
            for i, row in zip(ids, points):
                writer.writerow([int(i)] + [repr(float(v)) for v in row])
        else:
            for row in points:
                writer.writerow([repr(float(v)) for v in row])


class _atomic_open:
    """Write to a temp file in the target directory, then rename over."""

    def __init__(self, path, mode, **kwargs):
        self.path = Path(path)
        self.mode = mode
        self.kwargs = kwargs

    def __enter__(self):
        directory = self.path.parent if str(self.path.parent) else Path(".")
        fd, self.tmp = tempfile.mkstemp(dir=directory, prefix=f".{self.path.name}.")
        self.handle = os.fdopen(fd, self.mode, **self.kwargs)
        return self.handle

    def __exit__(self, exc_type, exc, tb):
        self.handle.close()
        if exc_type is None:
            os.replace(self.tmp, self.path)
        else:
            os.unlink(self.tmp)
        return False


def atomic_write_text(path, text):
    with _atomic_open(path, "w", encoding="utf-8") as handle:
        handle.write(text)
