"""Independent reference implementations used by the tests.

Written in plain Python (math.fsum, explicit loops) so they share no code
path with the vectorised package implementations.
"""

import math

import numpy as np

from repscore.losses import select_masks, loss_with_output_grads
from repscore.network import forward


def row_metrics(row, eta=0.01):
    """``(mean, std, soft_sparsity, l1, zscore_max, q_score, flag)`` by compensated sums."""
    v = [float(x) for x in row]
    n = len(v)
    mu = math.fsum(v) / n
    var = math.fsum((x - mu) ** 2 for x in v) / n
    sd = math.sqrt(var)
    sparsity = sum(1 for x in v if abs(x) < eta) / n
    l1 = math.fsum(abs(x) for x in v)
    if l1 == 0:
        return mu, sd, sparsity, l1, math.nan, math.nan, "zero_norm"
    if max(v) == min(v) or sd == 0.0:
        return mu, 0.0, sparsity, l1, math.nan, math.nan, "degenerate"
    z = (max(v) - mu) / sd
    return mu, sd, sparsity, l1, z, z / l1, "ok"


def pairwise_auroc(scores, positive):
    pos = [s for s, c in zip(scores, positive) if c]
    neg = [s for s, c in zip(scores, positive) if not c]
    wins = 0.0
    for a in pos:
        for b in neg:
            wins += 1.0 if a > b else 0.5 if a == b else 0.0
    return wins / (len(pos) * len(neg))


def enumerated_auprc(scores, positive):
    """Step-wise PR area from every distinct threshold, predicting ``score >= t``."""
    n_pos = sum(bool(c) for c in positive)
    area, prev_recall = 0.0, 0.0
    for t in sorted(set(scores), reverse=True):
        tp = sum(1 for s, c in zip(scores, positive) if s >= t and c)
        pp = sum(1 for s in scores if s >= t)
        recall = tp / n_pos
        area += (recall - prev_recall) * (tp / pp)
        prev_recall = recall
    return area


def nt_xent_loop(Z, tau):
    """NT-Xent by explicit loops over rows and negatives."""
    Z = np.asarray(Z, dtype=float)
    n2 = Z.shape[0]
    n = n2 // 2
    U = [z / math.sqrt(math.fsum(z * z)) for z in Z]
    total = []
    for i in range(n2):
        p = (i + n) % n2
        sims = {j: float(np.dot(U[i], U[j])) / tau for j in range(n2) if j != i}
        denom = math.fsum(math.exp(s) for s in sims.values())
        total.append(-math.log(math.exp(sims[p]) / denom))
    return math.fsum(total) / n2


def frozen_loss_fn(params, X, cfg, column_scale=1.0):
    """Loss as a function of the parameter arrays with ReLU gates and loss masks frozen at ``params``.

    Returns ``(f, relu_masks, masks)`` where ``f()`` evaluates the current
    contents of ``params.arrays()``.
    """
    ref = forward(params, X)
    masks = select_masks(ref.H, cfg, column_scale)
    relu = [m.copy() for m in ref.relu_masks]

    def f():
        c = forward(params, X, relu_masks=relu)
        return loss_with_output_grads(c.Z, c.H, cfg, masks, column_scale)[0].total

    return f, relu, masks


def central_differences(f, arrays, step=1e-5):
    """Numerical gradient of ``f()`` w.r.t. every entry of every array (perturbed in place)."""
    out = []
    for a in arrays:
        g = np.zeros_like(a)
        flat, gflat = a.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + step
            up = f()
            flat[i] = old - step
            down = f()
            flat[i] = old
            gflat[i] = (up - down) / (2 * step)
        out.append(g)
    return out


def relative_error(analytic, numeric, floor=1e-6):
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
