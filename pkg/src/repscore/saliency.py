"""Input-gradient heatmaps for individual representation features.

A saliency map for feature ``k`` at input ``x`` is ``|dh_k/dx|`` scaled so
its largest entry is 1.  ReLU gates are taken at ``x`` itself, so the
gradient is that of the linear piece the input falls in.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import EmptyProfile, IndexOutOfRange, IoError, ShapeMismatch
from .evaluation import ClassProfile
from .network import forward
from .repstore import format_float


@dataclass
class SaliencyMap:
    values: np.ndarray
    feature_index: int = None
    sample_id: int = None

    @property
    def grid_shape(self):
        side = math.isqrt(self.values.size)
        return (side, side) if side * side == self.values.size else None

    def stem(self):
        return f"saliency_s{self.sample_id}_f{self.feature_index}"

    def to_pgm(self, path):
        """8-bit binary PGM (``P5``); only for square inputs."""
        shape = self.grid_shape
        if shape is None:
            raise ShapeMismatch(f"cannot render {self.values.size} values as a square image")
        pixels = np.round(255 * self.values).astype(np.uint8).reshape(shape)
        try:
            with open(path, "wb") as fh:
                fh.write(f"P5\n{shape[1]} {shape[0]}\n255\n".encode("ascii"))
                fh.write(pixels.tobytes())
        except OSError as exc:
            raise IoError(f"cannot write {path}: {exc}") from exc

    def to_csv(self, path):
        try:
            with open(path, "w", newline="") as fh:
                fh.write(",".join(format_float(v) for v in self.values) + "\n")
        except OSError as exc:
            raise IoError(f"cannot write {path}: {exc}") from exc

    def save(self, directory):
        directory = Path(directory)
        paths = [directory / f"{self.stem()}.csv"]
        self.to_csv(paths[0])
        if self.grid_shape is not None:
            paths.append(directory / f"{self.stem()}.pgm")
            self.to_pgm(paths[1])
        return paths


def read_pgm(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    # four whitespace-separated header tokens, then exactly one whitespace byte
    tokens, pos = [], 0
    while len(tokens) < 4:
        while blob[pos:pos + 1].isspace():
            pos += 1
        start = pos
        while pos < len(blob) and not blob[pos:pos + 1].isspace():
            pos += 1
        tokens.append(blob[start:pos])
    magic, width, height, maxval = tokens
    if magic != b"P5" or int(maxval) != 255:
        raise ShapeMismatch(f"{path}: not an 8-bit binary PGM")
    data = blob[pos + 1:]
    return np.frombuffer(data, dtype=np.uint8).reshape(int(height), int(width))


def feature_gradient(params, sample, k):
    """``dh_k / dx`` at ``sample`` (1-D input vector) through the encoder only."""
    if not (0 <= k < params.rep_dim):
        raise IndexOutOfRange(f"feature {k} out of range for representation size {params.rep_dim}")
    x = np.asarray(sample, dtype=np.float64).reshape(1, -1)
    cache = forward(params, x)
    n_enc = len(params.encoder)
    da = np.zeros((1, params.rep_dim))
    da[0, k] = 1.0
    for i in range(n_enc - 1, -1, -1):
        dp = da * cache.relu_masks[i]
        da = dp @ params.encoder[i].W
    return da[0]


def normalize_saliency(raw, feature_index=None, sample_id=None):
    """``|raw| / max|raw|``; an all-zero gradient stays all zero."""
    raw = np.asarray(raw, dtype=np.float64)
    mag = np.abs(raw)
    top = mag.max() if mag.size else 0.0
    values = mag / top if top > 0 else np.zeros_like(mag)
    return SaliencyMap(values, feature_index, sample_id)


def saliency_map(params, sample, k, sample_id=None):
    return normalize_saliency(feature_gradient(params, sample, k), k, sample_id)


def dominant_feature_index(profile):
    """Index of the largest-magnitude entry of a class's correct-subset mean.

    Accepts a :class:`ClassProfile` or a plain vector.  Ties go to the lowest
    index.
    """
    if isinstance(profile, ClassProfile):
        v = profile.correct_mean
        if v is None:
            raise EmptyProfile(f"class {profile.class_id} has no correctly classified samples")
    else:
        v = profile
    v = np.asarray(v, dtype=np.float64).ravel()
    if v.size == 0:
        raise EmptyProfile("profile is empty")
    return int(np.argmax(np.abs(v)))
