"""Small fully connected encoder ``f`` and projection head ``g`` in plain numpy.

The encoder is a stack of ReLU layers (the last one included, so
representations are non-negative).  The head is a stack of layers with ReLU
between them and a linear output.  Forward passes keep what the backward
pass needs; gradients are written out by hand.

Weights are stored as ``(out, in)`` matrices and a batch of row vectors
``X`` of shape ``(n, in)`` maps to ``X @ W.T + b``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidConfig, ParseError, ShapeMismatch
from .repstore import RepresentationMatrix, ensure_dir, load_matrix, save_matrix


@dataclass
class Layer:
    W: np.ndarray
    b: np.ndarray

    @property
    def shape(self):
        return self.W.shape


@dataclass
class EncoderParams:
    """Weights of encoder ``f`` (r -> ... -> l) and projection head ``g`` (l -> ... -> m)."""

    encoder: list
    head: list
    seed: int = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        layers = self.encoder + self.head
        if not self.encoder:
            raise ShapeMismatch("encoder needs at least one layer")
        for i, layer in enumerate(layers):
            layer.W = np.asarray(layer.W, dtype=np.float64)
            layer.b = np.asarray(layer.b, dtype=np.float64)
            if layer.W.ndim != 2 or layer.b.shape != (layer.W.shape[0],):
                raise ShapeMismatch(f"layer {i}: W {layer.W.shape} and b {layer.b.shape} do not match")
            if not (np.all(np.isfinite(layer.W)) and np.all(np.isfinite(layer.b))):
                raise ShapeMismatch(f"layer {i} has non-finite weights")
        for i in range(1, len(layers)):
            if layers[i].W.shape[1] != layers[i - 1].W.shape[0]:
                raise ShapeMismatch(
                    f"layer {i} expects {layers[i].W.shape[1]} inputs, "
                    f"previous layer emits {layers[i - 1].W.shape[0]}"
                )

    @property
    def input_dim(self):
        return self.encoder[0].W.shape[1]

    @property
    def rep_dim(self):
        return self.encoder[-1].W.shape[0]

    @property
    def proj_dim(self):
        return self.head[-1].W.shape[0] if self.head else self.rep_dim

    @property
    def layers(self):
        return self.encoder + self.head

    def arrays(self):
        """Flat list of parameter arrays: W0, b0, W1, b1, ... (encoder first)."""
        out = []
        for layer in self.layers:
            out += [layer.W, layer.b]
        return out

    def array_names(self):
        names = []
        for part, layers in (("enc", self.encoder), ("head", self.head)):
            for i in range(len(layers)):
                names += [f"{part}{i}_W", f"{part}{i}_b"]
        return names

    def copy(self):
        return EncoderParams(
            [Layer(l.W.copy(), l.b.copy()) for l in self.encoder],
            [Layer(l.W.copy(), l.b.copy()) for l in self.head],
            seed=self.seed,
            meta=dict(self.meta),
        )

    def equals(self, other):
        a, b = self.arrays(), other.arrays()
        return len(a) == len(b) and all(x.shape == y.shape and np.array_equal(x, y) for x, y in zip(a, b))


def init_params(r, hidden, l, m, seed, head_hidden=()):
    """He-initialised encoder ``r -> hidden... -> l`` and head ``l -> head_hidden... -> m``.

    ``hidden`` and ``head_hidden`` are sequences of layer widths (possibly empty).
    Encoder biases start slightly positive so fewer ReLU units are dead at init.
    """
    rng = np.random.default_rng(seed)
    if isinstance(hidden, int):
        hidden = (hidden,)
    if isinstance(head_hidden, int):
        head_hidden = (head_hidden,)

    def make(dims, bias):
        layers = []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            W = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_out, fan_in))
            layers.append(Layer(W, np.full(fan_out, bias)))
        return layers

    enc = make([r, *hidden, l], 0.01)
    head = make([l, *head_hidden, m], 0.0)
    return EncoderParams(enc, head, seed=seed, meta={"r": r, "hidden": list(hidden), "l": l, "m": m})


@dataclass
class ForwardCache:
    inputs: list
    pre: list
    H: np.ndarray
    Z: np.ndarray
    relu_masks: list


def forward(params, X, relu_masks=None):
    """Run ``f`` then ``g`` on a batch.

    ``relu_masks`` (a list with one boolean array per ReLU, as returned in the
    cache) freezes the gating pattern; used by finite-difference checks to
    evaluate the smooth branch active at a reference point.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[1] != params.input_dim:
        raise ShapeMismatch(f"input has {X.shape[1]} features, encoder expects {params.input_dim}")
    inputs, pre, masks = [], [], []
    a = X
    n_enc = len(params.encoder)
    layers = params.layers
    for i, layer in enumerate(layers):
        inputs.append(a)
        p = a @ layer.W.T + layer.b
        pre.append(p)
        relu = i < n_enc or i < len(layers) - 1
        if relu:
            mask = relu_masks[len(masks)] if relu_masks is not None else p > 0
            masks.append(mask)
            a = np.where(mask, p, 0.0)
        else:
            a = p
        if i == n_enc - 1:
            H = a
    Z = a if params.head else H
    return ForwardCache(inputs, pre, H, Z, masks)


def encode(params, X):
    """Representations ``H`` (non-negative) and projections ``Z`` for a batch of inputs."""
    cache = forward(params, X)
    return cache.H, cache.Z


def backward(params, cache, dH, dZ):
    """Gradients of a loss w.r.t. every parameter array, given dL/dH and dL/dZ.

    Returns ``(grads, dX)`` with ``grads`` in :meth:`EncoderParams.arrays` order.
    """
    layers = params.layers
    n_enc = len(params.encoder)
    grads = [None] * (2 * len(layers))
    mask_idx = len(cache.relu_masks) - 1
    da = dZ if params.head else dZ + dH
    for i in range(len(layers) - 1, -1, -1):
        if i == n_enc - 1 and params.head:
            da = da + dH
        relu = i < n_enc or i < len(layers) - 1
        if relu:
            dp = da * cache.relu_masks[mask_idx]
            mask_idx -= 1
        else:
            dp = da
        grads[2 * i] = dp.T @ cache.inputs[i]
        grads[2 * i + 1] = dp.sum(axis=0)
        da = dp @ layers[i].W
    return grads, da


def save_params(params, directory):
    """Write every weight array as a repb file plus a ``params.json`` layout file."""
    directory = ensure_dir(directory)
    layout = {"seed": params.seed, "meta": params.meta, "encoder": [], "head": []}
    for part, layers in (("encoder", params.encoder), ("head", params.head)):
        for i, layer in enumerate(layers):
            stem = f"{'enc' if part == 'encoder' else 'head'}{i}"
            save_matrix(RepresentationMatrix(layer.W), directory / f"{stem}_W.repb")
            save_matrix(RepresentationMatrix(layer.b[None, :]), directory / f"{stem}_b.repb")
            layout[part].append({"W": f"{stem}_W.repb", "b": f"{stem}_b.repb", "shape": list(layer.W.shape)})
    with open(directory / "params.json", "w") as fh:
        json.dump(layout, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_params(directory):
    directory = Path(directory)
    try:
        with open(directory / "params.json") as fh:
            layout = json.load(fh)
    except OSError as exc:
        raise ParseError(f"cannot read params layout in {directory}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"bad params layout in {directory}: {exc}") from exc

    def read(entries):
        out = []
        for e in entries:
            W = load_matrix(directory / e["W"]).data
            b = load_matrix(directory / e["b"]).data.ravel()
            out.append(Layer(W, b))
        return out

    try:
        return EncoderParams(read(layout["encoder"]), read(layout["head"]), seed=layout.get("seed"),
                             meta=layout.get("meta", {}))
    except KeyError as exc:
        raise InvalidConfig(f"params layout missing key {exc}") from exc
