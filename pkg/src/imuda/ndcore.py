"""Shared numeric utilities: seeded random streams, sphere sampling, Cholesky.

All arrays are float64 numpy arrays stored sample-per-row, i.e. a batch of
``n`` points in ``R^d`` has shape ``(n, d)``.

Random streams are numpy ``Generator`` objects backed by PCG64, whose output
for a given seed is fixed by numpy across platforms.  Independent child
streams are derived from ``(seed, *keys)`` through ``SeedSequence`` so no two
consumers ever share state.
"""

from __future__ import annotations

import zlib

import numpy as np

from .errors import DecompositionError, DimensionError

FLOAT = np.float64


def _key_to_int(key) -> int:
    if isinstance(key, str):
        return zlib.crc32(key.encode("utf-8"))
    key = int(key)
    if key < 0:
        raise ValueError(f"stream keys must be non-negative, got {key}")
    return key


def make_rng(seed: int, *keys) -> np.random.Generator:
    """Return a PCG64 generator for the stream named by ``(seed, *keys)``.

    Keys may be non-negative ints or strings (hashed with CRC32), so
    ``make_rng(7, "swd", 12)`` is the projection stream for step 12 of run 7.
    """
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    spawn_key = tuple(_key_to_int(k) for k in keys)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=spawn_key)))


def sample_unit_sphere(rng: np.random.Generator, dim: int, count: int | None = None) -> np.ndarray:
    """Uniform draw(s) from the unit sphere in ``R^dim`` (Gaussian then normalize).

    Returns a vector of length ``dim``, or a ``(count, dim)`` array.
    """
    if dim < 1:
        raise DimensionError(f"sphere dimension must be >= 1, got {dim}")
    shape = (dim,) if count is None else (count, dim)
    g = rng.standard_normal(shape)
    norms = np.linalg.norm(g, axis=-1, keepdims=True)
    # a zero Gaussian draw has probability zero; guard anyway
    while np.any(norms == 0.0):
        bad = (norms == 0.0)[..., 0]
        g[bad] = rng.standard_normal(g[bad].shape)
        norms = np.linalg.norm(g, axis=-1, keepdims=True)
    return g / norms


def cholesky(a: np.ndarray, sym_tol: float = 1e-10) -> np.ndarray:
    """Lower-triangular ``L`` with ``L @ L.T == a`` (Cholesky-Banachiewicz).

    Raises DecompositionError naming the first non-positive pivot.
    """
    a = np.asarray(a, dtype=FLOAT)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"cholesky needs a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("cholesky input contains non-finite entries")
    if np.max(np.abs(a - a.T), initial=0.0) > sym_tol:
        raise ValueError("cholesky input is not symmetric")
    n = a.shape[0]
    low = np.zeros_like(a)
    for i in range(n):
        for j in range(i + 1):
            s = a[i, j] - np.dot(low[i, :j], low[j, :j])
            if i == j:
                if not s > 0.0:
                    raise DecompositionError(i, float(s))
                low[i, i] = np.sqrt(s)
            else:
                low[i, j] = s / low[j, j]
    return low


def as_matrix(x, name: str = "array", cols: int | None = None) -> np.ndarray:
    """Validate ``x`` as a finite 2-D float64 array, optionally checking its width."""
    arr = np.asarray(x, dtype=FLOAT)
    if arr.ndim != 2:
        raise DimensionError(f"{name}: expected a 2-D array, got shape {arr.shape}")
    if cols is not None and arr.shape[1] != cols:
        raise DimensionError(f"{name}: expected {cols} columns, got {arr.shape[1]}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name}: contains non-finite entries")
    return arr


def one_hot(indices, k: int) -> np.ndarray:
    indices = np.asarray(indices, dtype=np.int64)
    out = np.zeros((indices.shape[0], k), dtype=FLOAT)
    out[np.arange(indices.shape[0]), indices] = 1.0
    return out
