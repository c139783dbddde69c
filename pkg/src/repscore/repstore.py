"""Representation matrices, label sets and their on-disk formats.

Two matrix formats are supported:

``csv``
    Comma separated, one row per line, ``\\n`` terminated, no quoting.  An
    optional first line starting with ``#`` is treated as a header and
    ignored.  Values are written with 17 significant digits so that a
    reload reproduces every float64 exactly.

``repb``
    Little-endian binary: the magic ``b"REPB"``, a u32 version (1), u64
    rows, u64 cols, then ``rows * cols`` float64 values in row-major order.

Labels live in a separate CSV with columns
``sample_id,class_label[,predicted_label]``.
"""

from __future__ import annotations

import hashlib
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    EmptyMatrix,
    InvariantError,
    IoError,
    MissingCorrectness,
    NonFiniteValue,
    ParseError,
    ShapeMismatch,
    ZeroNormEmbedding,
)

REPB_MAGIC = b"REPB"
REPB_VERSION = 1
_REPB_HEADER = struct.Struct("<4sIQQ")
FORMATS = ("csv", "repb")


def _as_finite_matrix(data, what="matrix"):
    arr = np.array(data, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise ShapeMismatch(f"{what} must be 2-D, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise EmptyMatrix(f"{what} has shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        bad = np.argwhere(~np.isfinite(arr))[0]
        raise NonFiniteValue(f"{what} has a non-finite entry at row {bad[0]}, col {bad[1]}")
    return arr


@dataclass(eq=False)
class RepresentationMatrix:
    """N x l matrix of per-sample representations.

    Parameters
    ----------
    data : array_like, shape (n_samples, n_features)
        Finite feature values.  A 1-D input is treated as a single row.
    sample_ids : array_like of int, optional
        Row identifiers.  Defaults to ``0 .. n_samples - 1``.
    """

    data: np.ndarray
    sample_ids: np.ndarray = field(default=None)

    def __post_init__(self):
        self.data = _as_finite_matrix(self.data, "representation matrix")
        if self.sample_ids is None:
            self.sample_ids = np.arange(self.n_samples)
        else:
            self.sample_ids = np.asarray(self.sample_ids)
            if self.sample_ids.shape != (self.n_samples,):
                raise ShapeMismatch(
                    f"{self.sample_ids.shape[0]} sample ids for {self.n_samples} rows"
                )

    @property
    def n_samples(self):
        return self.data.shape[0]

    @property
    def n_features(self):
        return self.data.shape[1]

    def __eq__(self, other):
        if not isinstance(other, RepresentationMatrix):
            return NotImplemented
        return self.data.shape == other.data.shape and np.array_equal(self.data, other.data)

    def __len__(self):
        return self.n_samples


@dataclass(eq=False)
class ProjectionMatrix:
    """N x m matrix of projection-head outputs; every row must have nonzero norm."""

    data: np.ndarray

    def __post_init__(self):
        self.data = _as_finite_matrix(self.data, "projection matrix")
        zero_rows = np.flatnonzero(~np.any(self.data != 0, axis=1))
        if zero_rows.size:
            raise ZeroNormEmbedding(f"projection row {zero_rows[0]} is all zeros")

    @property
    def n_samples(self):
        return self.data.shape[0]

    @property
    def n_features(self):
        return self.data.shape[1]


@dataclass(eq=False)
class LabelSet:
    """Class labels with optional predictions and correctness flags.

    If both ``predicted_labels`` and ``correctness`` are given they must
    agree; if only predictions are given, correctness is derived from them.
    """

    class_labels: np.ndarray
    predicted_labels: np.ndarray = None
    correctness: np.ndarray = None
    sample_ids: np.ndarray = None

    def __post_init__(self):
        self.class_labels = _as_label_array(self.class_labels, "class_labels")
        n = self.class_labels.shape[0]
        if self.predicted_labels is not None:
            self.predicted_labels = _as_label_array(self.predicted_labels, "predicted_labels")
            if self.predicted_labels.shape[0] != n:
                raise ShapeMismatch("predicted_labels length differs from class_labels")
            derived = self.predicted_labels == self.class_labels
            if self.correctness is None:
                self.correctness = derived
        if self.correctness is not None:
            self.correctness = np.asarray(self.correctness, dtype=bool)
            if self.correctness.shape != (n,):
                raise ShapeMismatch("correctness length differs from class_labels")
            if self.predicted_labels is not None and not np.array_equal(
                self.correctness, self.predicted_labels == self.class_labels
            ):
                raise InvariantError("correctness disagrees with predicted vs class labels")
        if self.sample_ids is None:
            self.sample_ids = np.arange(n)
        else:
            self.sample_ids = np.asarray(self.sample_ids)
            if self.sample_ids.shape != (n,):
                raise ShapeMismatch("sample_ids length differs from class_labels")

    @property
    def n_samples(self):
        return self.class_labels.shape[0]

    def __len__(self):
        return self.n_samples

    def require_correctness(self):
        if self.correctness is None:
            raise MissingCorrectness("label set has no predictions or correctness flags")
        return self.correctness

    def check_aligned(self, m):
        if self.n_samples != m.n_samples:
            raise ShapeMismatch(f"{self.n_samples} labels for {m.n_samples} representations")


def _as_label_array(values, name):
    arr = np.asarray(values)
    if arr.ndim != 1:
        raise ShapeMismatch(f"{name} must be 1-D")
    if arr.size and not np.issubdtype(arr.dtype, np.integer):
        as_int = arr.astype(np.int64)
        if not np.array_equal(as_int, arr):
            raise InvariantError(f"{name} must hold integers")
        arr = as_int
    arr = arr.astype(np.int64)
    if np.any(arr < 0):
        raise InvariantError(f"{name} must be non-negative")
    return arr


def _infer_format(path, fmt):
    if fmt is None:
        fmt = Path(path).suffix.lstrip(".").lower()
    if fmt not in FORMATS:
        raise ValueError(f"unknown matrix format {fmt!r}; expected one of {FORMATS}")
    return fmt


def save_matrix(m, path, format=None):
    """Write ``m`` to ``path`` as csv or repb (inferred from the suffix if not given)."""
    if not isinstance(m, RepresentationMatrix):
        m = RepresentationMatrix(m)
    fmt = _infer_format(path, format)
    try:
        if fmt == "csv":
            lines = [",".join(format_float(v) for v in row) for row in m.data]
            with open(path, "w", newline="") as fh:
                fh.write("\n".join(lines) + "\n")
        else:
            rows, cols = m.data.shape
            with open(path, "wb") as fh:
                fh.write(_REPB_HEADER.pack(REPB_MAGIC, REPB_VERSION, rows, cols))
                fh.write(np.ascontiguousarray(m.data, dtype="<f8").tobytes())
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def load_matrix(path, format=None):
    """Read a matrix written by :func:`save_matrix` (or by any tool using the same formats)."""
    fmt = _infer_format(path, format)
    try:
        if fmt == "csv":
            with open(path, "r", newline="") as fh:
                text = fh.read()
            return RepresentationMatrix(_parse_csv(text, path))
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    return RepresentationMatrix(_parse_repb(blob, path))


def format_float(v):
    return "%.17g" % v


def _parse_csv(text, path="<csv>"):
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if lines and lines[0].startswith("#"):
        lines = lines[1:]
    if not lines:
        raise EmptyMatrix(f"{path}: no data rows")
    rows = []
    width = None
    for lineno, line in enumerate(lines, start=1):
        line = line.rstrip("\r")
        if not line.strip():
            raise ParseError(f"{path}: blank line {lineno}")
        cells = line.split(",")
        if width is None:
            width = len(cells)
        elif len(cells) != width:
            raise ParseError(f"{path}: line {lineno} has {len(cells)} columns, expected {width}")
        try:
            rows.append([float(c) for c in cells])
        except ValueError as exc:
            raise ParseError(f"{path}: line {lineno}: {exc}") from exc
    return np.array(rows, dtype=np.float64)


def _parse_repb(blob, path="<repb>"):
    if len(blob) < _REPB_HEADER.size:
        if not blob:
            raise EmptyMatrix(f"{path}: empty file")
        raise ParseError(f"{path}: truncated header")
    magic, version, rows, cols = _REPB_HEADER.unpack_from(blob)
    if magic != REPB_MAGIC:
        raise ParseError(f"{path}: bad magic {magic!r}")
    if version != REPB_VERSION:
        raise ParseError(f"{path}: unsupported version {version}")
    if rows == 0 or cols == 0:
        raise EmptyMatrix(f"{path}: shape ({rows}, {cols})")
    expected = _REPB_HEADER.size + 8 * rows * cols
    if len(blob) != expected:
        raise ParseError(f"{path}: {len(blob)} bytes, expected {expected}")
    data = np.frombuffer(blob, dtype="<f8", offset=_REPB_HEADER.size, count=rows * cols)
    return data.reshape(rows, cols).astype(np.float64)


def save_labels(labels, path):
    header = ["sample_id", "class_label"]
    has_pred = labels.predicted_labels is not None
    if has_pred:
        header.append("predicted_label")
    lines = [",".join(header)]
    for i in range(labels.n_samples):
        cells = [str(labels.sample_ids[i]), str(labels.class_labels[i])]
        if has_pred:
            cells.append(str(labels.predicted_labels[i]))
        lines.append(",".join(cells))
    try:
        with open(path, "w", newline="") as fh:
            fh.write("\n".join(lines) + "\n")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def load_labels(path):
    try:
        with open(path, "r", newline="") as fh:
            lines = [ln.rstrip("\r") for ln in fh.read().split("\n") if ln.strip()]
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    if lines and (lines[0].startswith("#") or lines[0].startswith("sample_id")):
        lines = lines[1:]
    if not lines:
        raise EmptyMatrix(f"{path}: no label rows")
    rows = []
    for lineno, line in enumerate(lines, start=1):
        cells = line.split(",")
        if len(cells) not in (2, 3) or (rows and len(cells) != len(rows[0])):
            raise ParseError(f"{path}: label line {lineno} has {len(cells)} columns")
        try:
            rows.append([int(c) for c in cells])
        except ValueError as exc:
            raise ParseError(f"{path}: label line {lineno}: {exc}") from exc
    arr = np.array(rows, dtype=np.int64)
    predicted = arr[:, 2] if arr.shape[1] == 3 else None
    return LabelSet(arr[:, 1], predicted_labels=predicted, sample_ids=arr[:, 0])


def file_digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def ensure_dir(path):
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create directory {path}: {exc}") from exc
    return Path(path)
