"""ROC / precision-recall evaluation of quality scores as correctness predictors.

Throughout, the *positive* class is a correctly classified sample, so a
useful score ranks correct samples above misclassified ones.

Curves sweep the distinct score values in descending order.  Samples that
share a score enter at the same threshold; the ROC area uses the trapezoid
rule, which counts a tied positive/negative pair as one half, i.e. exactly
the Mann-Whitney probability ``P(s+ > s-) + 0.5 P(s+ = s-)``.  The PR area
is the non-interpolated step sum ``sum_k (R_k - R_{k-1}) * P_k``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import InvariantError, NoPositives, OneClassOnly, ShapeMismatch
from .metrics import METRIC_NAMES
from .repstore import LabelSet, RepresentationMatrix, format_float

# Sign applied to each metric so that larger oriented scores predict a
# correct classification: sparse, peaked representations are the good ones.
METRIC_ORIENTATION = {
    "mean": -1.0,
    "std": -1.0,
    "soft_sparsity": 1.0,
    "l1_norm": -1.0,
    "zscore_max": 1.0,
    "q_score": 1.0,
}


@dataclass
class CurveResult:
    kind: str
    points: np.ndarray
    area: float
    n_positive: int
    n_negative: int
    thresholds: np.ndarray = field(default=None, repr=False)

    @property
    def x(self):
        return self.points[:, 0]

    @property
    def y(self):
        return self.points[:, 1]

    def to_csv(self, path):
        xname, yname = ("fpr", "tpr") if self.kind == "roc" else ("recall", "precision")
        with open(path, "w", newline="") as fh:
            fh.write(f"{xname},{yname}\n")
            for x, y in self.points:
                fh.write(f"{format_float(x)},{format_float(y)}\n")


def _prepare(scores, correctness):
    s = np.asarray(scores, dtype=np.float64).ravel()
    c = np.asarray(correctness, dtype=bool).ravel()
    if s.shape != c.shape:
        raise ShapeMismatch(f"{s.size} scores for {c.size} correctness flags")
    if not np.all(np.isfinite(s)):
        raise InvariantError("scores must be finite")
    return s, c


def _tie_grouped_counts(s, c):
    """Cumulative (tp, fp, threshold) at each distinct score, highest first."""
    order = np.argsort(-s, kind="mergesort")
    s_sorted = s[order]
    c_sorted = c[order]
    ends = np.r_[np.flatnonzero(np.diff(s_sorted)), s_sorted.size - 1]
    tp = np.cumsum(c_sorted)[ends]
    fp = (ends + 1) - tp
    return tp, fp, s_sorted[ends]


def roc_curve(scores, correctness):
    s, c = _prepare(scores, correctness)
    n_pos = int(c.sum())
    n_neg = int(c.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise OneClassOnly(f"ROC needs both classes (positives={n_pos}, negatives={n_neg})")
    tp, fp, thr = _tie_grouped_counts(s, c)
    tpr = np.r_[0.0, tp / n_pos]
    fpr = np.r_[0.0, fp / n_neg]
    area = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1])) / 2.0)
    return CurveResult("roc", np.column_stack([fpr, tpr]), area, n_pos, n_neg, np.r_[np.inf, thr])


def pr_curve(scores, correctness):
    s, c = _prepare(scores, correctness)
    n_pos = int(c.sum())
    n_neg = int(c.size - n_pos)
    if n_pos == 0:
        raise NoPositives("precision-recall needs at least one correct sample")
    tp, fp, thr = _tie_grouped_counts(s, c)
    precision = tp / (tp + fp)
    recall = tp / n_pos
    area = float(np.sum(np.diff(np.r_[0.0, recall]) * precision))
    return CurveResult("pr", np.column_stack([recall, precision]), area, n_pos, n_neg, thr)


@dataclass
class BenchmarkRow:
    metric: str
    auroc: float
    auprc: float
    orientation: float
    n_samples: int
    prevalence: float


def oriented_scores(report, name):
    return METRIC_ORIENTATION[name] * report.metric(name)


def metric_benchmark(report, correctness, metrics=METRIC_NAMES):
    """AUROC and AUPRC of every metric in ``report`` as a predictor of correctness.

    Flagged (degenerate / zero-norm) rows are dropped before any curve is
    built.  Metrics where lower is better are negated first; the sign used is
    recorded in each row's ``orientation``.
    """
    correctness = np.asarray(correctness, dtype=bool)
    if correctness.shape != (len(report),):
        raise ShapeMismatch(f"{correctness.size} correctness flags for {len(report)} report rows")
    keep = report.valid
    c = correctness[keep]
    if c.all() or not c.any():
        raise OneClassOnly("benchmark needs correct and incorrect samples among valid rows")
    rows = []
    for name in metrics:
        s = oriented_scores(report, name)[keep]
        rows.append(
            BenchmarkRow(
                metric=name,
                auroc=roc_curve(s, c).area,
                auprc=pr_curve(s, c).area,
                orientation=METRIC_ORIENTATION[name],
                n_samples=int(c.size),
                prevalence=float(c.mean()),
            )
        )
    return rows


def benchmark_to_csv(rows, path):
    with open(path, "w", newline="") as fh:
        fh.write("metric,auroc,auprc,orientation,n_samples,prevalence\n")
        for r in rows:
            fh.write(
                f"{r.metric},{format_float(r.auroc)},{format_float(r.auprc)},"
                f"{r.orientation:+.0f},{r.n_samples},{format_float(r.prevalence)}\n"
            )


def benchmark_to_json(rows, path=None):
    payload = [
        {
            "metric": r.metric,
            "auroc": r.auroc,
            "auprc": r.auprc,
            "orientation": r.orientation,
            "n_samples": r.n_samples,
            "prevalence": r.prevalence,
        }
        for r in rows
    ]
    text = json.dumps(payload, indent=2)
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text + "\n")
    return text


@dataclass
class ClassProfile:
    """Class-averaged representations split by downstream correctness.

    ``correct_mean`` / ``incorrect_mean`` are None when that subset is empty.
    """

    class_id: int
    accuracy: float
    mean: np.ndarray
    correct_mean: np.ndarray
    incorrect_mean: np.ndarray
    n_correct: int
    n_incorrect: int

    @property
    def incorrect_empty(self):
        return self.incorrect_mean is None

    @property
    def correct_empty(self):
        return self.correct_mean is None


def class_profiles(m, labels):
    """Per-class mean representations, sorted by descending class accuracy."""
    if not isinstance(m, RepresentationMatrix):
        m = RepresentationMatrix(m)
    if not isinstance(labels, LabelSet):
        raise TypeError("labels must be a LabelSet")
    labels.check_aligned(m)
    correct = labels.require_correctness()
    profiles = []
    for k in np.unique(labels.class_labels):
        in_class = labels.class_labels == k
        ok = in_class & correct
        bad = in_class & ~correct
        n_ok, n_bad = int(ok.sum()), int(bad.sum())
        profiles.append(
            ClassProfile(
                class_id=int(k),
                accuracy=n_ok / (n_ok + n_bad),
                mean=m.data[in_class].mean(axis=0),
                correct_mean=m.data[ok].mean(axis=0) if n_ok else None,
                incorrect_mean=m.data[bad].mean(axis=0) if n_bad else None,
                n_correct=n_ok,
                n_incorrect=n_bad,
            )
        )
    profiles.sort(key=lambda p: (-p.accuracy, p.class_id))
    return profiles


def sorted_feature_profile(profiles):
    """Stack each class's mean representation sorted by feature magnitude.

    Returns ``(matrix, class_ids, accuracies)``; row order follows the input,
    which :func:`class_profiles` already sorts by accuracy.
    """
    profiles = list(profiles)
    if not profiles:
        raise InvariantError("no class profiles given")
    rows = []
    for p in profiles:
        v = np.asarray(p.mean, dtype=np.float64)
        rows.append(v[np.argsort(-np.abs(v), kind="stable")])
    ids = np.array([p.class_id for p in profiles])
    acc = np.array([p.accuracy for p in profiles])
    return np.vstack(rows), ids, acc


def profiles_to_matrices(profiles, which="correct"):
    """Class-profile heatmap data: one row per class, NaN rows for empty subsets."""
    rows = []
    for p in profiles:
        v = {"correct": p.correct_mean, "incorrect": p.incorrect_mean, "all": p.mean}[which]
        rows.append(np.full(p.mean.shape, np.nan) if v is None else v)
    return np.vstack(rows)


def exact_sparsity(m, eps_zero=0.0):
    """Per-row fraction of entries with ``|value| <= eps_zero``."""
    if eps_zero < 0:
        raise InvariantError("eps_zero must be non-negative")
    data = m.data if isinstance(m, RepresentationMatrix) else np.atleast_2d(np.asarray(m, float))
    return (np.abs(data) <= eps_zero).mean(axis=1)


def curves_svg(curves, path=None, title="", width=360, height=360):
    """Render curves as a self-contained SVG line plot.

    ``curves`` maps a legend label to a :class:`CurveResult`.
    """
    pad = 40
    pw, ph = width - 2 * pad, height - 2 * pad
    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]
    kinds = {c.kind for c in curves.values()}
    xlabel, ylabel = ("FPR", "TPR") if kinds == {"roc"} else ("Recall", "Precision")

    def px(x):
        return pad + x * pw

    def py(y):
        return pad + (1.0 - y) * ph

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height + 20 * len(curves)}">',
        f'<rect x="{pad}" y="{pad}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
        f'<text x="{width / 2}" y="{pad / 2}" text-anchor="middle" font-size="12">{title}</text>',
        f'<text x="{width / 2}" y="{height - 8}" text-anchor="middle" font-size="11">{xlabel}</text>',
        f'<text x="12" y="{height / 2}" font-size="11" transform="rotate(-90 12 {height / 2})" '
        f'text-anchor="middle">{ylabel}</text>',
    ]
    for t in (0.0, 0.5, 1.0):
        parts.append(f'<text x="{px(t)}" y="{pad + ph + 14}" font-size="9" text-anchor="middle">{t:g}</text>')
        parts.append(f'<text x="{pad - 4}" y="{py(t) + 3}" font-size="9" text-anchor="end">{t:g}</text>')
    for i, (label, curve) in enumerate(curves.items()):
        color = colors[i % len(colors)]
        pts = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in curve.points)
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        name = "AUROC" if curve.kind == "roc" else "AUPRC"
        ly = height + 14 + 20 * i
        parts.append(f'<line x1="{pad}" y1="{ly - 4}" x2="{pad + 20}" y2="{ly - 4}" stroke="{color}"/>')
        parts.append(f'<text x="{pad + 26}" y="{ly}" font-size="10">{label} ({name} {curve.area:.3f})</text>')
    parts.append("</svg>")
    svg = "\n".join(parts) + "\n"
    if path is not None:
        with open(path, "w") as fh:
            fh.write(svg)
    return svg
