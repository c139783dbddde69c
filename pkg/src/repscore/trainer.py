"""Desk-scale contrastive training pipeline.

Synthetic "images" stand in for a real dataset: each class has a template
made of a few Gaussian bumps on a square grid, and each sample blends its
class template with a per-sample clutter image (bumps at random positions,
unrelated to any class) plus pixel noise.  Samples dominated by clutter
carry a weak class signal and many spurious activations; they are the ones
a linear probe tends to get wrong.

Views for contrastive training come from scale jitter, additive Gaussian
noise and random pixel masking.  The encoder is trained by plain momentum
descent; a multinomial logistic probe is then fit on frozen representations
of un-augmented inputs and scored on a held-out split.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .errors import InvalidConfig, NonFiniteGradient, OneClassOnly, ShapeMismatch
from .evaluation import class_profiles, exact_sparsity, pr_curve, roc_curve
from .losses import LossBreakdown, LossConfig, loss_with_output_grads
from .metrics import batch_quality_report
from .network import backward, encode, forward, init_params
from .repstore import LabelSet, RepresentationMatrix, format_float

HISTORY_HEADER = ("step",) + LossBreakdown.HISTORY_FIELDS


@dataclass(frozen=True)
class AugmentConfig:
    noise_sigma: float = 0.1
    mask_fraction: float = 0.25
    scale_range: tuple = (0.8, 1.2)

    def __post_init__(self):
        lo, hi = self.scale_range
        if self.noise_sigma < 0 or not (0 <= self.mask_fraction < 1) or not (0 < lo <= hi):
            raise InvalidConfig(f"bad augmentation config {self}")
        object.__setattr__(self, "scale_range", (float(lo), float(hi)))


IDENTITY_AUGMENT = AugmentConfig(0.0, 0.0, (1.0, 1.0))


@dataclass
class SyntheticDataset:
    samples: np.ndarray
    class_labels: np.ndarray
    templates: np.ndarray
    blend: np.ndarray
    seed: int
    augment: AugmentConfig = field(default_factory=AugmentConfig)

    @property
    def n_samples(self):
        return self.samples.shape[0]

    @property
    def r(self):
        return self.samples.shape[1]

    @property
    def k_classes(self):
        return self.templates.shape[0]

    def subset(self, idx):
        return replace(self, samples=self.samples[idx], class_labels=self.class_labels[idx],
                       blend=self.blend[idx])


def _bump_template(rng, r, n_bumps):
    side = math.isqrt(r)
    if side * side == r:
        yy, xx = np.mgrid[0:side, 0:side]
        coords = np.column_stack([yy.ravel(), xx.ravel()]).astype(float)
        centers = rng.uniform(0, side - 1, size=(n_bumps, 2))
    else:
        coords = np.arange(r, dtype=float)[:, None]
        centers = rng.uniform(0, r - 1, size=(n_bumps, 1))
    widths = rng.uniform(0.8, 1.6, size=n_bumps)
    amps = rng.uniform(0.5, 1.0, size=n_bumps)
    t = np.zeros(r)
    for c, w, a in zip(centers, widths, amps):
        d2 = np.sum((coords - c) ** 2, axis=1)
        t += a * np.exp(-d2 / (2 * w * w))
    return t / t.max()


def generate_dataset(k_classes=8, n_per_class=64, r=64, seed=7, noise=0.1, blend=2.0,
                     n_bumps=3, clutter_bumps=None, augment=None):
    """Balanced synthetic classification data in ``[0, 1]^r``.

    Each sample is ``T_c + w * C + noise * eps`` clipped to ``[0, 1]``,
    where ``T_c`` is its class template, ``C`` a fresh clutter image of
    ``clutter_bumps`` bumps (default ``2 * n_bumps``), and ``w ~ U(0, blend)``.
    ``noise=0, blend=0`` reproduces the templates exactly.
    """
    if k_classes < 2 or n_per_class < 2 or r < 1:
        raise InvalidConfig("need k_classes >= 2, n_per_class >= 2, r >= 1")
    if noise < 0 or blend < 0:
        raise InvalidConfig("noise and blend must be non-negative")
    rng = np.random.default_rng(seed)
    templates = np.vstack([_bump_template(rng, r, n_bumps) for _ in range(k_classes)])
    labels = np.repeat(np.arange(k_classes), n_per_class)
    n = labels.size
    w = rng.uniform(0.0, blend, size=n) if blend > 0 else np.zeros(n)
    x = templates[labels].copy()
    if blend > 0:
        nc = clutter_bumps if clutter_bumps is not None else 2 * n_bumps
        clutter = np.vstack([_bump_template(rng, r, nc) for _ in range(n)])
        x = x + w[:, None] * clutter
    if noise > 0:
        x = x + noise * rng.normal(size=x.shape)
    x = np.clip(x, 0.0, 1.0)
    return SyntheticDataset(x, labels, templates, w, seed, augment or AugmentConfig())


def _augment_rows(X, rng, cfg):
    n, r = X.shape
    lo, hi = cfg.scale_range
    out = X * (rng.uniform(lo, hi, size=(n, 1)) if hi > lo else lo)
    if cfg.noise_sigma > 0:
        out = out + cfg.noise_sigma * rng.normal(size=out.shape)
    k = int(round(cfg.mask_fraction * r))
    if k:
        cols = np.argsort(rng.random((n, r)), axis=1)[:, :k]
        out[np.arange(n)[:, None], cols] = 0.0
    return out


def augment(sample, seed, cfg=None):
    """Two independently transformed views of one input vector.

    ``seed`` may be an int or a ``numpy.random.Generator``.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    cfg = cfg or AugmentConfig()
    x = np.asarray(sample, dtype=np.float64).reshape(1, -1)
    return _augment_rows(x, rng, cfg)[0], _augment_rows(x, rng, cfg)[0]


@dataclass(frozen=True)
class TrainOptions:
    lr: float = 0.05
    momentum: float = 0.9
    steps: int = 2000
    batch_size: int = 32
    seed: int = 7
    hidden: tuple = (128,)
    rep_dim: int = 32
    proj_dim: int = 16
    # None -> 1 / (batch_size * rep_dim): column norms become per-entry means
    column_scale: float = None

    def __post_init__(self):
        if self.batch_size < 4 or self.batch_size % 2:
            raise InvalidConfig("batch_size counts both views and must be even and >= 4")
        if self.steps < 0 or self.lr <= 0 or not (0 <= self.momentum < 1):
            raise InvalidConfig(f"bad optimiser settings {self}")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))

    def to_dict(self):
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(**d)
        except TypeError as exc:
            raise InvalidConfig(str(exc)) from exc


@dataclass
class TrainHistory:
    rows: list = field(default_factory=list)

    def append(self, step, breakdown):
        self.rows.append((step,) + breakdown.history_row())

    def column(self, name):
        i = HISTORY_HEADER.index(name)
        return np.array([row[i] for row in self.rows], dtype=float)

    def __len__(self):
        return len(self.rows)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            fh.write(",".join(HISTORY_HEADER) + "\n")
            for row in self.rows:
                cells = [str(v) if isinstance(v, (int, np.integer)) else format_float(v) for v in row]
                fh.write(",".join(cells) + "\n")


def train_encoder(dataset, cfg, opt=None, params=None):
    """Momentum descent on the total loss; returns ``(params, history)``.

    ``params`` defaults to a fresh initialisation from ``opt.seed``.  Batches
    and augmentations are drawn from a generator seeded with ``opt.seed`` too,
    so two calls with equal arguments are bitwise identical.
    """
    opt = opt or TrainOptions()
    X_all = dataset.samples if isinstance(dataset, SyntheticDataset) else np.asarray(dataset, float)
    aug = dataset.augment if isinstance(dataset, SyntheticDataset) else AugmentConfig()
    n_images = opt.batch_size // 2
    if X_all.shape[0] < n_images:
        raise InvalidConfig(f"dataset has {X_all.shape[0]} samples, batch needs {n_images}")
    init_seq, batch_seq = np.random.SeedSequence(opt.seed).spawn(2)
    if params is None:
        params = init_params(X_all.shape[1], opt.hidden, opt.rep_dim, opt.proj_dim,
                             seed=int(init_seq.generate_state(1)[0]))
        params.seed = opt.seed
    else:
        params = params.copy()
    column_scale = opt.column_scale
    if column_scale is None:
        column_scale = 1.0 / (opt.batch_size * params.rep_dim)
    rng = np.random.default_rng(batch_seq)
    arrays = params.arrays()
    velocity = [np.zeros_like(a) for a in arrays]
    history = TrainHistory()
    for step in range(opt.steps):
        idx = rng.choice(X_all.shape[0], size=n_images, replace=False)
        X = X_all[idx]
        views = np.vstack([_augment_rows(X, rng, aug), _augment_rows(X, rng, aug)])
        # overflow is detected just below and reported with its step index
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            cache = forward(params, views)
            breakdown, dZ, dH = loss_with_output_grads(cache.Z, cache.H, cfg, column_scale=column_scale)
            grads, _ = backward(params, cache, dH, dZ)
        if not (math.isfinite(breakdown.total) and all(np.all(np.isfinite(g)) for g in grads)):
            raise NonFiniteGradient(f"non-finite loss or gradient at step {step}", step=step)
        history.append(step, breakdown)
        for a, v, g in zip(arrays, velocity, grads):
            v *= opt.momentum
            v += g
            a -= opt.lr * v
    return params, history


@dataclass
class LinearProbe:
    W: np.ndarray
    b: np.ndarray
    shift: np.ndarray
    scale: np.ndarray
    epochs: int = 0
    grad_norm: float = float("nan")

    def logits(self, H):
        H = np.asarray(H, dtype=np.float64)
        if H.ndim != 2 or H.shape[1] != self.W.shape[0]:
            raise ShapeMismatch(f"probe expects {self.W.shape[0]} features, got {np.shape(H)}")
        return ((H - self.shift) / self.scale) @ self.W + self.b

    def predict(self, H):
        return np.argmax(self.logits(H), axis=1)


def train_linear_probe(H_train, labels, lr=0.5, max_epochs=3000, tol=1e-5, k_classes=None):
    """Multinomial logistic regression by full-batch gradient descent.

    Features are standardised with training statistics first (an affine map,
    so the classifier stays linear in the representation).  Stops when the
    gradient norm drops below ``tol`` or after ``max_epochs``.
    """
    H = np.asarray(getattr(H_train, "data", H_train), dtype=np.float64)
    y = np.asarray(getattr(labels, "class_labels", labels), dtype=np.int64)
    if H.shape[0] != y.shape[0]:
        raise ShapeMismatch(f"{H.shape[0]} representations for {y.shape[0]} labels")
    if np.unique(y).size < 2:
        raise OneClassOnly("linear probe needs at least two classes")
    K = int(k_classes or y.max() + 1)
    shift = H.mean(axis=0)
    scale = H.std(axis=0)
    scale = np.where(scale > 1e-8, scale, 1.0)
    Xs = (H - shift) / scale
    n, l = Xs.shape
    Y = np.zeros((n, K))
    Y[np.arange(n), y] = 1.0
    W = np.zeros((l, K))
    b = np.zeros(K)
    gnorm = float("inf")
    epoch = 0
    for epoch in range(1, max_epochs + 1):
        logits = Xs @ W + b
        logits -= logits.max(axis=1, keepdims=True)
        P = np.exp(logits)
        P /= P.sum(axis=1, keepdims=True)
        D = (P - Y) / n
        gW = Xs.T @ D
        gb = D.sum(axis=0)
        gnorm = float(np.sqrt(np.sum(gW * gW) + np.sum(gb * gb)))
        if gnorm < tol:
            break
        W -= lr * gW
        b -= lr * gb
    return LinearProbe(W, b, shift, scale, epoch, gnorm)


def evaluate_probe(probe, H_test, labels):
    """``(accuracy, correctness)`` of argmax predictions against ``labels``."""
    H = np.asarray(getattr(H_test, "data", H_test), dtype=np.float64)
    y = np.asarray(getattr(labels, "class_labels", labels), dtype=np.int64)
    if H.shape[0] != y.shape[0]:
        raise ShapeMismatch(f"{H.shape[0]} representations for {y.shape[0]} labels")
    pred = probe.predict(H)
    correct = pred == y
    return float(correct.sum() / correct.size), correct


def stratified_split(labels, test_fraction=0.2, seed=0):
    """Per-class shuffled split; returns ``(train_idx, test_idx)`` sorted."""
    rng = np.random.default_rng(seed)
    train, test = [], []
    for k in np.unique(labels):
        idx = np.flatnonzero(labels == k)
        idx = idx[rng.permutation(idx.size)]
        n_test = max(1, int(round(test_fraction * idx.size)))
        test.append(idx[:n_test])
        train.append(idx[n_test:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(test))


def bottom_quartile_mean(values):
    v = np.sort(np.asarray(values, dtype=float)[np.isfinite(values)])
    k = max(1, math.ceil(0.25 * v.size))
    return float(v[:k].mean())


def top_column_mass(H, k=3):
    """Fraction of total column-L1 mass held by the ``k`` heaviest columns."""
    norms = np.abs(np.asarray(H, dtype=float)).sum(axis=0)
    total = norms.sum()
    return float(np.sort(norms)[::-1][:k].sum() / total) if total > 0 else 0.0


@dataclass
class ArmReport:
    """Everything measured for one trained encoder."""

    name: str
    params: object
    history: TrainHistory
    accuracy: float
    mean_q: float
    bottom_quartile_q: float
    mean_sparsity: float
    top3_column_mass: float
    q_auroc: float
    q_auprc: float
    prevalence: float
    H: np.ndarray
    test_idx: np.ndarray
    correctness: np.ndarray
    predictions: np.ndarray
    report: object
    profiles: list

    def summary(self):
        return {
            "accuracy": self.accuracy,
            "mean_q_score": self.mean_q,
            "bottom_quartile_q_score": self.bottom_quartile_q,
            "mean_exact_sparsity": self.mean_sparsity,
            "top3_column_mass": self.top3_column_mass,
            "q_score_auroc": self.q_auroc,
            "q_score_auprc": self.q_auprc,
            "prevalence": self.prevalence,
            "n_test": int(self.test_idx.size),
            "final_contrastive": float(self.history.column("contrastive")[-1]) if len(self.history) else None,
        }


def evaluate_encoder(name, params, history, dataset, split, eta=0.01, eps_zero=0.0):
    """Probe accuracy, Q-Score statistics and sparsity for a trained encoder.

    Label-free quantities (Q-Score, sparsity, column mass) use every sample;
    the probe is fit on the training split and its correctness flags on the
    held-out split drive the Q-Score AUROC / AUPRC.
    """
    train_idx, test_idx = split
    H, _ = encode(params, dataset.samples)
    y = dataset.class_labels
    probe = train_linear_probe(H[train_idx], y[train_idx], k_classes=dataset.k_classes)
    accuracy, correct = evaluate_probe(probe, H[test_idx], y[test_idx])
    report = batch_quality_report(RepresentationMatrix(H), eta)
    q = report.q_score
    q_test = q[test_idx]
    valid = np.isfinite(q_test)
    auroc = auprc = float("nan")
    if correct[valid].any() and not correct[valid].all():
        auroc = roc_curve(q_test[valid], correct[valid]).area
        auprc = pr_curve(q_test[valid], correct[valid]).area
    predictions = probe.predict(H)
    labels = LabelSet(y[test_idx], predicted_labels=predictions[test_idx])
    profiles = class_profiles(RepresentationMatrix(H[test_idx]), labels)
    return ArmReport(
        name=name,
        params=params,
        history=history,
        accuracy=accuracy,
        mean_q=float(np.nanmean(q)),
        bottom_quartile_q=bottom_quartile_mean(q),
        mean_sparsity=float(exact_sparsity(H, eps_zero).mean()),
        top3_column_mass=top_column_mass(H),
        q_auroc=auroc,
        q_auprc=auprc,
        prevalence=float(correct.mean()),
        H=H,
        test_idx=test_idx,
        correctness=correct,
        predictions=predictions,
        report=report,
        profiles=profiles,
    )


@dataclass
class Comparison:
    base: ArmReport
    reg: ArmReport
    pretrain_steps: int = 0

    def summary(self):
        return {"pretrain_steps": self.pretrain_steps, "baseline": self.base.summary(),
                "regularized": self.reg.summary()}


def ab_compare(dataset, cfg_base, cfg_reg, opt=None, pretrain_steps=0, test_fraction=0.2):
    """Train a baseline and a regularised arm from one shared initialisation.

    With ``pretrain_steps > 0`` a common encoder is first trained with
    ``cfg_base`` and both arms continue from it.  Both arms see the same
    batches and augmentations (same ``opt.seed``).  Encoders are trained on
    the training split only.
    """
    opt = opt or TrainOptions()
    split = stratified_split(dataset.class_labels, test_fraction, seed=opt.seed)
    train_set = dataset.subset(split[0])
    start = None
    if pretrain_steps:
        start, _ = train_encoder(train_set, cfg_base, replace(opt, steps=pretrain_steps))
    p_base, h_base = train_encoder(train_set, cfg_base, opt, params=start)
    p_reg, h_reg = train_encoder(train_set, cfg_reg, opt, params=start)
    base = evaluate_encoder("baseline", p_base, h_base, dataset, split, cfg_base.eta)
    reg = evaluate_encoder("regularized", p_reg, h_reg, dataset, split, cfg_reg.eta)
    return Comparison(base, reg, pretrain_steps)
