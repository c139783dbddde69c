"""Contrastive loss with Q-Score and column-L1 regularisation.

Everything is written as a quantity to *minimise*::

    total = nt_xent(Z) - lambda1 * q_reg(H) + lambda2 * column_penalty(H)

    q_reg(H)          = (1/2N) sum_i [Q_i < alpha] * Q_i
    column_penalty(H) = sum_k [|H_{:,k}|_1 > beta] * |H_{:,k}|_1

The Q-Score term is averaged over the batch like the contrastive term; the
column penalty is not.

``Z`` stacks the projections of both views, rows ``i`` and ``i + N`` being a
positive pair; ``H`` stacks the matching representations.  The indicator
masks are selected on the current batch and then held fixed, so gradients
never flow through the selection.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import InvalidConfig, NonFiniteGradient, ShapeMismatch, TooFewSamples, ZeroNormEmbedding
from .metrics import DEFAULT_ETA
from .network import backward, forward

NORM_FLOOR = 1e-12


@dataclass(frozen=True)
class ThresholdPolicy:
    """How a mask threshold is chosen: a fixed value, or a percentile of the batch."""

    kind: str
    value: float

    def __post_init__(self):
        if self.kind not in ("absolute", "percentile"):
            raise InvalidConfig(f"threshold policy kind must be absolute or percentile, got {self.kind!r}")
        if not math.isfinite(self.value):
            raise InvalidConfig("threshold value must be finite")
        if self.kind == "percentile" and not (0.0 < self.value < 100.0):
            raise InvalidConfig(f"percentile must lie in (0, 100), got {self.value}")

    @classmethod
    def parse(cls, spec):
        if isinstance(spec, ThresholdPolicy):
            return spec
        if isinstance(spec, dict):
            return cls(spec["kind"], float(spec["value"]))
        if isinstance(spec, str) and spec.endswith(")") and "(" in spec:
            kind, value = spec[:-1].split("(", 1)
            return cls(kind.strip(), float(value))
        raise InvalidConfig(f"cannot parse threshold policy {spec!r}")

    def __str__(self):
        return f"{self.kind}({self.value:g})"


def percentile(p):
    return ThresholdPolicy("percentile", float(p))


def absolute(v):
    return ThresholdPolicy("absolute", float(v))


@dataclass(frozen=True)
class LossConfig:
    tau: float = 0.2
    lambda1: float = 0.0
    lambda2: float = 0.0
    alpha_policy: ThresholdPolicy = field(default_factory=lambda: percentile(25))
    beta_policy: ThresholdPolicy = field(default_factory=lambda: percentile(90))
    eta: float = DEFAULT_ETA

    def __post_init__(self):
        object.__setattr__(self, "alpha_policy", ThresholdPolicy.parse(self.alpha_policy))
        object.__setattr__(self, "beta_policy", ThresholdPolicy.parse(self.beta_policy))
        if not (math.isfinite(self.tau) and self.tau > 0):
            raise InvalidConfig(f"tau must be positive, got {self.tau}")
        for name in ("lambda1", "lambda2"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise InvalidConfig(f"{name} must be finite and non-negative, got {v}")
        if not (0.0 < self.eta < 1.0):
            raise InvalidConfig(f"eta must lie in (0, 1), got {self.eta}")

    @property
    def regularized(self):
        return self.lambda1 > 0 or self.lambda2 > 0

    def to_dict(self):
        d = asdict(self)
        d["alpha_policy"] = {"kind": self.alpha_policy.kind, "value": self.alpha_policy.value}
        d["beta_policy"] = {"kind": self.beta_policy.kind, "value": self.beta_policy.value}
        return d

    @classmethod
    def from_dict(cls, d):
        known = {"tau", "lambda1", "lambda2", "alpha_policy", "beta_policy", "eta"}
        unknown = set(d) - known
        if unknown:
            raise InvalidConfig(f"unknown loss config keys: {sorted(unknown)}")
        try:
            return cls(**{k: (float(v) if k in ("tau", "lambda1", "lambda2", "eta") else v) for k, v in d.items()})
        except (TypeError, ValueError, KeyError) as exc:
            raise InvalidConfig(str(exc)) from exc

    def to_json(self, path=None):
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class LossBreakdown:
    contrastive: float
    q_reg: float
    column_penalty: float
    total: float
    sample_mask: np.ndarray
    column_mask: np.ndarray
    alpha: float = float("nan")
    beta: float = float("nan")

    HISTORY_FIELDS = ("contrastive", "q_reg", "column_penalty", "total", "n_masked_samples",
                      "n_masked_columns", "alpha", "beta")

    def history_row(self):
        return (self.contrastive, self.q_reg, self.column_penalty, self.total,
                int(self.sample_mask.sum()), int(self.column_mask.sum()), self.alpha, self.beta)


# -- contrastive term -------------------------------------------------------

def scaled_cosine_similarity(a, b, tau):
    """``cos(a, b) / tau``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if tau <= 0:
        raise InvalidConfig("tau must be positive")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na < NORM_FLOOR or nb < NORM_FLOOR:
        raise ZeroNormEmbedding("cosine similarity of a zero-norm vector")
    return float(a @ b / (na * nb) / tau)


def _stack_views(Z, Z_tilde=None):
    Z = np.asarray(getattr(Z, "data", Z), dtype=np.float64)
    if Z_tilde is not None:
        Zt = np.asarray(getattr(Z_tilde, "data", Z_tilde), dtype=np.float64)
        if Zt.shape != Z.shape:
            raise ShapeMismatch(f"view shapes differ: {Z.shape} vs {Zt.shape}")
        Z = np.vstack([Z, Zt])
    return Z


def nt_xent_with_grad(Z, tau):
    """NT-Xent loss over ``2N`` stacked embeddings and its gradient w.r.t. ``Z``.

    ``L = -(1/2N) sum_i log( exp(s_{i,p(i)}) / sum_{j != i} exp(s_ij) )`` with
    ``s_ij = cos(z_i, z_j) / tau`` and ``p(i) = (i + N) mod 2N``.
    """
    Z = np.asarray(Z, dtype=np.float64)
    n2 = Z.shape[0]
    if n2 < 4 or n2 % 2:
        raise TooFewSamples(f"need an even number (>= 4) of embeddings, got {n2}")
    norms = np.linalg.norm(Z, axis=1)
    if np.any(norms < NORM_FLOOR):
        raise ZeroNormEmbedding(f"embedding {int(np.argmin(norms))} has (near) zero norm")
    U = Z / norms[:, None]
    S = (U @ U.T) / tau
    np.fill_diagonal(S, -np.inf)
    n = n2 // 2
    partner = np.r_[np.arange(n, n2), np.arange(n)]
    row_max = S.max(axis=1, keepdims=True)
    E = np.exp(S - row_max)
    denom = E.sum(axis=1, keepdims=True)
    lse = np.log(denom[:, 0]) + row_max[:, 0]
    pos = S[np.arange(n2), partner]
    loss = float(np.mean(lse - pos))

    G = E / denom
    G[np.arange(n2), partner] -= 1.0
    G /= n2
    dU = (G + G.T) @ U / tau
    radial = np.sum(dU * U, axis=1, keepdims=True)
    dZ = (dU - radial * U) / norms[:, None]
    return loss, dZ


def nt_xent_loss(Z, tau, Z_tilde=None):
    """NT-Xent loss.  Either pass the stacked ``2N`` rows, or the two views separately."""
    return nt_xent_with_grad(_stack_views(Z, Z_tilde), tau)[0]


# -- Q-Score regulariser ----------------------------------------------------

def _rank_count(fraction, n):
    # ceil with a guard so that e.g. 0.25 * 8 does not round up to 3
    return min(n, max(0, math.ceil(fraction * n - 1e-9)))


def _row_q_parts(H):
    l = H.shape[1]
    mu = H.mean(axis=1)
    dev = H - mu[:, None]
    sigma = np.sqrt((dev * dev).mean(axis=1))
    constant = H.max(axis=1) == H.min(axis=1)
    sigma[constant] = 0.0
    l1 = np.abs(H).sum(axis=1)
    valid = (sigma > 0) & (l1 > 0)
    top = H.argmax(axis=1)
    safe_sigma = np.where(valid, sigma, 1.0)
    safe_l1 = np.where(valid, l1, 1.0)
    z = (H[np.arange(H.shape[0]), top] - mu) / safe_sigma
    q = z / safe_l1
    return dict(l=l, mu=mu, dev=dev, sigma=safe_sigma, l1=safe_l1, top=top, z=z, q=q, valid=valid)


def sample_mask(H, cfg):
    """Indicator of rows whose Q-Score falls below the resolved alpha.

    Returns ``(mask, alpha)``.  Rows with undefined Q-Score are never selected.
    Under a percentile policy the ``ceil(p/100 * n_valid)`` lowest-Q rows are
    selected (ties broken by row order) and ``alpha`` is the first unselected
    Q value.
    """
    H = np.asarray(getattr(H, "data", H), dtype=np.float64)
    parts = _row_q_parts(H)
    q, valid = parts["q"], parts["valid"]
    mask = np.zeros(H.shape[0], dtype=bool)
    pol = cfg.alpha_policy
    if pol.kind == "absolute":
        mask = valid & (q < pol.value)
        return mask, pol.value
    idx = np.flatnonzero(valid)
    k = _rank_count(pol.value / 100.0, idx.size)
    order = idx[np.argsort(q[idx], kind="stable")]
    mask[order[:k]] = True
    alpha = float(q[order[k]]) if k < idx.size else float("inf")
    return mask, alpha


def q_regularizer(H, cfg, mask=None, reduction="sum"):
    """``sum_i [Q_i < alpha] Q_i`` and the mask used.

    ``reduction="mean"`` divides by the number of rows, which is how the term
    enters :func:`total_loss` (inside the batch average, next to the
    contrastive term).
    """
    H = np.asarray(getattr(H, "data", H), dtype=np.float64)
    if mask is None:
        mask, _ = sample_mask(H, cfg)
    parts = _row_q_parts(H)
    mask = np.asarray(mask, dtype=bool) & parts["valid"]
    value = float(np.sum(parts["q"][mask]))
    if reduction == "mean":
        value /= H.shape[0]
    elif reduction != "sum":
        raise ValueError(f"unknown reduction {reduction!r}")
    return value, mask


def q_regularizer_grad(H, mask):
    """Gradient of ``sum_i mask_i Q_i`` with respect to ``H`` (mask held fixed).

    For one row with mean mu, population std sigma, arg-max index t, z-score
    z and L1 norm S::

        dz/dh_j = ([j == t] - 1/l) / sigma - z (h_j - mu) / (l sigma^2)
        dQ/dh_j = dz/dh_j / S - z sign(h_j) / S^2
    """
    H = np.asarray(H, dtype=np.float64)
    p = _row_q_parts(H)
    mask = np.asarray(mask, dtype=bool) & p["valid"]
    l, sigma, S, z = p["l"], p["sigma"][:, None], p["l1"][:, None], p["z"][:, None]
    onehot = np.zeros_like(H)
    onehot[np.arange(H.shape[0]), p["top"]] = 1.0
    dz = (onehot - 1.0 / l) / sigma - z * p["dev"] / (l * sigma * sigma)
    dq = dz / S - z * np.sign(H) / (S * S)
    return np.where(mask[:, None], dq, 0.0)


# -- column penalty ---------------------------------------------------------

def column_mask(H, cfg, scale=1.0):
    """Indicator of columns whose (scaled) L1 norm exceeds the resolved beta.

    Under a percentile policy the ``ceil((1 - q/100) * l)`` heaviest columns
    are selected and ``beta`` is the heaviest unselected norm.
    """
    H = np.asarray(getattr(H, "data", H), dtype=np.float64)
    norms = scale * np.abs(H).sum(axis=0)
    pol = cfg.beta_policy
    if pol.kind == "absolute":
        return norms > pol.value, pol.value
    k = _rank_count(1.0 - pol.value / 100.0, norms.size)
    order = np.argsort(-norms, kind="stable")
    mask = np.zeros(norms.size, dtype=bool)
    mask[order[:k]] = True
    beta = float(norms[order[k]]) if k < norms.size else float("-inf")
    return mask, beta


def column_penalty(H, cfg, mask=None, scale=1.0):
    """``sum_k [|H_{:,k}|_1 > beta] |H_{:,k}|_1`` and the column mask used.

    ``scale`` multiplies every column norm; the trainer passes
    ``1 / (batch_rows * l)`` by default, turning norms into per-entry means.
    """
    H = np.asarray(getattr(H, "data", H), dtype=np.float64)
    if H.size == 0:
        raise ShapeMismatch("column penalty of an empty matrix")
    if mask is None:
        mask, _ = column_mask(H, cfg, scale)
    mask = np.asarray(mask, dtype=bool)
    norms = scale * np.abs(H).sum(axis=0)
    return float(np.sum(norms[mask])), mask


def column_penalty_grad(H, mask, scale=1.0):
    return scale * np.sign(H) * np.asarray(mask, dtype=bool)[None, :]


# -- assembled objective ----------------------------------------------------

@dataclass
class FrozenMasks:
    """Masks and thresholds selected at a reference point."""

    samples: np.ndarray
    columns: np.ndarray
    alpha: float = float("nan")
    beta: float = float("nan")


def select_masks(H, cfg, column_scale=1.0):
    sm, alpha = sample_mask(H, cfg)
    cm, beta = column_mask(H, cfg, column_scale)
    return FrozenMasks(sm, cm, alpha, beta)


def loss_with_output_grads(Z, H, cfg, masks=None, column_scale=1.0):
    """Total loss breakdown plus dL/dZ and dL/dH.

    ``Z`` and ``H`` are the stacked (2N-row) projections and representations.
    """
    Z = np.asarray(getattr(Z, "data", Z), dtype=np.float64)
    H = np.asarray(getattr(H, "data", H), dtype=np.float64)
    if Z.shape[0] != H.shape[0]:
        raise ShapeMismatch(f"{Z.shape[0]} projections for {H.shape[0]} representations")
    if masks is None:
        masks = select_masks(H, cfg, column_scale)
    contrastive, dZ = nt_xent_with_grad(Z, cfg.tau)
    qreg, smask = q_regularizer(H, cfg, masks.samples, reduction="mean")
    pen, cmask = column_penalty(H, cfg, masks.columns, column_scale)
    total = contrastive
    dH = np.zeros_like(H)
    if cfg.lambda1:
        total = total - cfg.lambda1 * qreg
        dH -= (cfg.lambda1 / H.shape[0]) * q_regularizer_grad(H, smask)
    if cfg.lambda2:
        total = total + cfg.lambda2 * pen
        dH += cfg.lambda2 * column_penalty_grad(H, cmask, column_scale)
    breakdown = LossBreakdown(contrastive, qreg, pen, total, smask, cmask, masks.alpha, masks.beta)
    return breakdown, dZ, dH


def total_loss(Z, Z_tilde, H, cfg, masks=None, column_scale=1.0):
    """Assemble all three terms.  ``H`` holds both views' representations (2N rows)."""
    breakdown, _, _ = loss_with_output_grads(_stack_views(Z, Z_tilde), H, cfg, masks, column_scale)
    return breakdown


def loss_gradients(params, batch, cfg, masks=None, column_scale=1.0):
    """Gradients of the total loss w.r.t. every parameter of ``params``.

    ``batch`` is the pair of view matrices ``(X1, X2)`` or a single stacked
    ``2N``-row array.  Returns ``(breakdown, grads)`` with ``grads`` ordered
    like :meth:`EncoderParams.arrays`.  Masks are selected at the current
    parameters (or taken from ``masks``) and treated as constants.
    """
    X = np.vstack(batch) if isinstance(batch, (tuple, list)) else np.asarray(batch, dtype=np.float64)
    cache = forward(params, X)
    breakdown, dZ, dH = loss_with_output_grads(cache.Z, cache.H, cfg, masks, column_scale)
    grads, _ = backward(params, cache, dH, dZ)
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient("non-finite gradient")
    return breakdown, grads
