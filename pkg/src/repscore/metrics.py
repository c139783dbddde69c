"""Per-sample representation quality metrics and the Q-Score.

For a representation ``h`` of length ``l``::

    mean          = sum(h) / l
    std           = sqrt(sum((h - mean)**2) / l)       # population std
    soft_sparsity = fraction of entries with |h_j| < eta
    l1_norm       = sum(|h_j|)
    zscore_max    = (max(h) - mean) / std
    q_score       = zscore_max / l1_norm

A high Q-Score means the vector is sparse and has at least one feature that
stands far above the rest.  None of these need labels.

The scalar functions and :func:`batch_quality_report` share one row kernel,
so batch cells are bit-for-bit equal to the scalar results.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateRepresentation,
    EmptyVector,
    InvalidEta,
    ParseError,
    SingleElement,
    ZeroNorm,
)
from .repstore import RepresentationMatrix, format_float

DEFAULT_ETA = 0.01

METRIC_NAMES = ("mean", "std", "soft_sparsity", "l1_norm", "zscore_max", "q_score")

FLAG_OK = "ok"
FLAG_DEGENERATE = "degenerate"
FLAG_ZERO_NORM = "zero_norm"


def _check_eta(eta):
    if not (0.0 < eta < 1.0):
        raise InvalidEta(f"eta must lie in (0, 1), got {eta}")


def _vector(rep, min_len=1):
    v = np.asarray(rep, dtype=np.float64).ravel()
    if v.size == 0:
        raise EmptyVector("representation is empty")
    if v.size < min_len:
        raise SingleElement(f"need at least {min_len} features, got {v.size}")
    return v


def _row_moments(data):
    """Row means and population standard deviations.

    Rows whose entries are all equal get ``std == 0`` exactly; a naive
    two-pass estimate can leave rounding residue there.
    """
    mu = data.mean(axis=1)
    dev = data - mu[:, None]
    sigma = np.sqrt((dev * dev).mean(axis=1))
    constant = data.max(axis=1) == data.min(axis=1)
    sigma[constant] = 0.0
    return mu, sigma


def _row_metrics(data, eta):
    mu, sigma = _row_moments(data)
    absd = np.abs(data)
    sparsity = (absd < eta).mean(axis=1)
    l1 = absd.sum(axis=1)
    top = data.max(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = (top - mu) / sigma
        q = z / l1
    return mu, sigma, sparsity, l1, z, q


def mean(rep):
    v = _vector(rep)
    return float(_row_moments(v[None, :])[0][0])


def std(rep):
    v = _vector(rep, min_len=2)
    return float(_row_moments(v[None, :])[1][0])


def soft_sparsity(rep, eta=DEFAULT_ETA):
    """Fraction of entries whose magnitude is strictly below ``eta``."""
    _check_eta(eta)
    v = _vector(rep)
    return float(_row_metrics(v[None, :], eta)[2][0])


def l1_norm(rep):
    v = _vector(rep)
    return float(np.abs(v[None, :]).sum(axis=1)[0])


def zscore_max(rep):
    """Z-score of the largest entry, ``(max(h) - mean) / std``.

    Uses the raw maximum, not the largest magnitude.
    """
    v = _vector(rep, min_len=2)
    _, sigma, _, _, z, _ = _row_metrics(v[None, :], DEFAULT_ETA)
    if sigma[0] == 0.0:
        raise DegenerateRepresentation("all features are equal; std is zero")
    return float(z[0])


def q_score(rep):
    v = _vector(rep, min_len=2)
    _, sigma, _, l1, _, q = _row_metrics(v[None, :], DEFAULT_ETA)
    if l1[0] == 0.0:
        raise ZeroNorm("representation has zero L1 norm")
    if sigma[0] == 0.0:
        raise DegenerateRepresentation("all features are equal; std is zero")
    return float(q[0])


@dataclass
class QualityReport:
    """Per-sample metric columns for one representation matrix.

    Rows flagged ``degenerate`` (zero std) or ``zero_norm`` carry NaN in
    ``zscore_max`` and ``q_score`` and are excluded from curve computations.
    """

    sample_ids: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    soft_sparsity: np.ndarray
    l1_norm: np.ndarray
    zscore_max: np.ndarray
    q_score: np.ndarray
    flags: np.ndarray
    eta: float = DEFAULT_ETA

    def __len__(self):
        return len(self.sample_ids)

    @property
    def valid(self):
        return self.flags == FLAG_OK

    def metric(self, name):
        if name not in METRIC_NAMES:
            raise KeyError(f"unknown metric {name!r}")
        return getattr(self, name)

    def subset(self, rows):
        rows = np.asarray(rows)
        cols = [self.metric(name)[rows] for name in METRIC_NAMES]
        return QualityReport(self.sample_ids[rows], *cols, flags=self.flags[rows], eta=self.eta)

    def as_matrix(self):
        return np.column_stack([self.metric(name) for name in METRIC_NAMES])

    def to_csv(self, path):
        header = ["sample_id", *METRIC_NAMES, "flag"]
        lines = [",".join(header)]
        for i in range(len(self)):
            cells = [str(self.sample_ids[i])]
            cells += [format_float(self.metric(name)[i]) for name in METRIC_NAMES]
            cells.append(str(self.flags[i]))
            lines.append(",".join(cells))
        with open(path, "w", newline="") as fh:
            fh.write(f"# eta={format_float(self.eta)}\n")
            fh.write("\n".join(lines) + "\n")

    @classmethod
    def from_csv(cls, path):
        with open(path, "r", newline="") as fh:
            lines = [ln.rstrip("\r") for ln in fh.read().split("\n") if ln.strip()]
        eta = DEFAULT_ETA
        if lines and lines[0].startswith("#"):
            meta = lines.pop(0)[1:].strip()
            if meta.startswith("eta="):
                eta = float(meta[4:])
        expected = ["sample_id", *METRIC_NAMES, "flag"]
        if not lines or lines[0].split(",") != expected:
            raise ParseError(f"{path}: missing or wrong quality-report header")
        rows = [ln.split(",") for ln in lines[1:]]
        if not rows:
            raise ParseError(f"{path}: no report rows")
        if any(len(r) != len(expected) for r in rows):
            raise ParseError(f"{path}: ragged quality-report rows")
        try:
            ids = np.array([int(r[0]) for r in rows])
            cols = np.array([[float(c) for c in r[1:-1]] for r in rows]).T
        except ValueError as exc:
            raise ParseError(f"{path}: {exc}") from exc
        flags = np.array([r[-1] for r in rows])
        return cls(ids, *cols, flags=flags, eta=eta)


def batch_quality_report(m, eta=DEFAULT_ETA):
    """All six metrics for every row of ``m``; bad rows are flagged, never dropped."""
    _check_eta(eta)
    if not isinstance(m, RepresentationMatrix):
        m = RepresentationMatrix(m)
    mu, sigma, sparsity, l1, z, q = _row_metrics(m.data, eta)
    flags = np.full(m.n_samples, FLAG_OK, dtype=object)
    degenerate = sigma == 0.0
    zero = l1 == 0.0
    flags[degenerate] = FLAG_DEGENERATE
    flags[zero] = FLAG_ZERO_NORM
    bad = degenerate | zero
    z = np.where(bad, np.nan, z)
    q = np.where(bad, np.nan, q)
    return QualityReport(
        sample_ids=m.sample_ids.copy(),
        mean=mu,
        std=sigma,
        soft_sparsity=sparsity,
        l1_norm=l1,
        zscore_max=z,
        q_score=q,
        flags=flags.astype(str),
        eta=float(eta),
    )


def q_scores(data):
    """Q-Scores of every row of a raw array, NaN where undefined."""
    data = np.asarray(data, dtype=np.float64)
    _, sigma, _, l1, _, q = _row_metrics(data, DEFAULT_ETA)
    return np.where((sigma == 0.0) | (l1 == 0.0), np.nan, q)
