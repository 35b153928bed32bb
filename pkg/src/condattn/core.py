"""Dense row-vector primitives shared by the rest of the package.

Vectors are 1-D float64 arrays interpreted as rows, matrices are 2-D float64
arrays. Products follow the row convention ``x @ W`` throughout, so an
associative state built from keys of size ``d_k`` and values of size ``d_v``
has shape ``(d_k, d_v)``.
"""
from __future__ import annotations

import enum

import numpy as np

NORM_EPS = 1e-6
_SEED_MASK = (1 << 64) - 1


class Activation(str, enum.Enum):
    IDENTITY = "identity"
    RELU = "relu"
    ELU_PLUS_ONE = "elu-plus-one"


class Norm(str, enum.Enum):
    NONE = "none"
    RMS = "rms"
    LAYER = "layer"
    # Only meaningful inside linear attention, where the per-token
    # query/key-sum inner product is available.
    DENOMINATOR = "denominator"


def as_row(x, name: str = "x") -> np.ndarray:
    """Coerce ``x`` to a finite 1-D float64 array."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError(f"{name} must be a non-empty row vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def as_matrix(x, name: str = "X") -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be a 2-D matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def seed_sequence(seed: int, *stream: int) -> np.random.SeedSequence:
    """Seed sequence for the stream identified by ``(seed, *stream)``.

    Negative seeds are folded into the unsigned 64-bit range.
    """
    words = [int(seed) & _SEED_MASK]
    for s in stream:
        if s < 0:
            raise ValueError(f"stream identifiers must be non-negative, got {s}")
        words.append(int(s))
    return np.random.SeedSequence(words)


def stream_rng(seed: int, *stream: int) -> np.random.Generator:
    """Independent generator for one stream, e.g. ``(seed, tag, trial)``.

    Each Monte Carlo trial gets its own generator, so results never depend
    on how trials are scheduled across threads.
    """
    return np.random.Generator(np.random.PCG64(seed_sequence(seed, *stream)))


def unit_rows(rng: np.random.Generator, count: int, dim: int) -> np.ndarray:
    """``count`` rows drawn uniformly from the unit sphere in ``dim`` dimensions."""
    x = rng.standard_normal((count, dim))
    norms = np.linalg.norm(x, axis=1)
    bad = norms == 0.0
    while np.any(bad):
        x[bad] = rng.standard_normal((int(bad.sum()), dim))
        norms[bad] = np.linalg.norm(x[bad], axis=1)
        bad = norms == 0.0
    return x / norms[:, None]


def sample_unit_sphere(dim: int, count: int, seed: int) -> np.ndarray:
    """Sample ``count`` unit vectors in ``dim`` dimensions, shape ``(count, dim)``.

    Gaussian entries are normalised row by row, which gives the uniform
    (rotation-invariant) distribution on the sphere. The output is a pure
    function of ``(dim, count, seed)``.
    """
    if dim < 1:
        raise ValueError(f"dim must be >= 1, got {dim}")
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    return unit_rows(stream_rng(seed), count, dim)


def apply_activation(kind, x) -> np.ndarray:
    """Elementwise activation; works on vectors and on stacked rows alike."""
    kind = Activation(kind)
    x = np.asarray(x, dtype=np.float64)
    if kind is Activation.IDENTITY:
        return x
    if kind is Activation.RELU:
        return np.maximum(x, 0.0)
    # elu(x) + 1: x + 1 above zero, exp(x) below, strictly positive.
    return np.where(x >= 0.0, x + 1.0, np.exp(np.minimum(x, 0.0)))


def normalize(kind, x) -> np.ndarray:
    """Normalise the last axis of ``x``.

    ``rms`` divides by ``sqrt(mean(x**2) + NORM_EPS)``; ``layer`` centres then
    divides by ``sqrt(var + NORM_EPS)`` with no affine parameters. An all-zero
    input stays zero.
    """
    kind = Norm(kind)
    x = np.asarray(x, dtype=np.float64)
    if np.any(np.isnan(x)):
        raise ValueError("cannot normalise NaN input")
    if kind is Norm.NONE:
        return x
    if kind is Norm.RMS:
        return x / np.sqrt(np.mean(x * x, axis=-1, keepdims=True) + NORM_EPS)
    if kind is Norm.LAYER:
        centred = x - np.mean(x, axis=-1, keepdims=True)
        return centred / np.sqrt(np.mean(centred * centred, axis=-1, keepdims=True) + NORM_EPS)
    raise ValueError("denominator normalisation only applies inside linear attention")


def outer_product(a, b) -> np.ndarray:
    a = as_row(a, "a")
    b = as_row(b, "b")
    return np.outer(a, b)
