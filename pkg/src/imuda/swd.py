"""Sliced Wasserstein distance between two equal-size empirical samples.

Both samples are projected onto random unit directions; on each slice the
squared-cost 1D optimal transport pairs the i-th smallest projection of one
sample with the i-th smallest of the other.  The estimate is the average over
slices of the mean squared paired difference (divided by the sample count,
so the value does not scale with batch size).

Sums are taken with ``math.fsum`` so results do not depend on summation
order: reversing a slice direction, swapping the arguments or permuting rows
all give bit-identical values.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError
from .ndcore import FLOAT, as_matrix, make_rng, sample_unit_sphere

MAX_ORACLE_POINTS = 6


@dataclass(frozen=True)
class ProjectionSet:
    directions: np.ndarray  # (L, F), unit rows
    seed: int | None = None

    @property
    def count(self) -> int:
        return self.directions.shape[0]

    @property
    def dim(self) -> int:
        return self.directions.shape[1]


def draw_projections(count: int, dim: int, seed: int, *keys) -> ProjectionSet:
    """``count`` uniform directions in ``R^dim`` from the stream ``(seed, "swd", *keys)``."""
    if count < 1:
        raise ValueError(f"projection count must be >= 1, got {count}")
    rng = make_rng(seed, "swd", *keys)
    return ProjectionSet(sample_unit_sphere(rng, dim, count), seed)


@dataclass
class SwdResult:
    value: float
    per_projection: np.ndarray
    grad_a: np.ndarray
    grad_b: np.ndarray


def _mean_exact(values) -> float:
    # reference-shifted mean: equals the common value exactly when all inputs agree
    values = np.asarray(values, dtype=FLOAT)
    ref = float(values[0])
    return ref + math.fsum(values - ref) / values.shape[0]


def wasserstein_1d(a, b) -> float:
    """Squared-cost 1D Wasserstein distance between equal-size samples."""
    a = np.asarray(a, dtype=FLOAT).ravel()
    b = np.asarray(b, dtype=FLOAT).ravel()
    if a.shape[0] != b.shape[0]:
        raise DimensionError(f"sample sizes differ: {a.shape[0]} vs {b.shape[0]}")
    if a.shape[0] == 0:
        raise DimensionError("samples must be non-empty")
    d = np.sort(a, kind="stable") - np.sort(b, kind="stable")
    return math.fsum(d * d) / a.shape[0]


def exact_wd_oracle(a, b) -> float:
    """Brute-force optimal coupling over all permutations (testing aid, m <= 6).

    For uniform empirical measures of equal size the optimal plan is a
    permutation, so this is the exact Kantorovich value in any dimension.
    Rows are points; 1-D inputs are treated as scalar samples.
    """
    a = np.asarray(a, dtype=FLOAT)
    b = np.asarray(b, dtype=FLOAT)
    if a.ndim == 1:
        a, b = a[:, None], b[:, None]
    m = a.shape[0]
    if b.shape != a.shape:
        raise DimensionError(f"sample shapes differ: {a.shape} vs {b.shape}")
    if m > MAX_ORACLE_POINTS:
        raise ValueError(f"brute-force oracle is limited to {MAX_ORACLE_POINTS} points, got {m}")
    cost = np.sum((a[:, None, :] - b[None, :, :]) ** 2, axis=2)
    best = math.inf
    for perm in itertools.permutations(range(m)):
        best = min(best, math.fsum(cost[i, perm[i]] for i in range(m)))
    return best / m


def project(batch, direction) -> np.ndarray:
    """Inner products of every row of ``batch`` with ``direction``."""
    x = np.asarray(batch, dtype=FLOAT)
    g = np.asarray(direction, dtype=FLOAT).ravel()
    if x.ndim != 2 or x.shape[1] != g.shape[0]:
        raise DimensionError(f"batch {x.shape} cannot be projected on a direction of length {g.shape[0]}")
    return x @ g


def swd(a, b, proj: ProjectionSet, with_grad: bool = True) -> SwdResult:
    """Empirical sliced Wasserstein distance and its gradients w.r.t. both samples.

    Gradients hold each slice's sort permutation fixed; at ties the stable
    sort's pairing is used, which yields a valid subgradient.
    """
    a = as_matrix(a, "swd first sample")
    b = as_matrix(b, "swd second sample")
    if a.shape[0] != b.shape[0]:
        raise DimensionError(f"swd needs equal sample counts, got {a.shape[0]} and {b.shape[0]}")
    if a.shape[0] == 0:
        raise DimensionError("swd samples must be non-empty")
    if proj.count == 0:
        raise ValueError("swd needs at least one projection")
    if a.shape[1] != proj.dim or b.shape[1] != proj.dim:
        raise DimensionError(f"projections have dim {proj.dim}, samples have {a.shape[1]} and {b.shape[1]}")

    m, n_proj = a.shape[0], proj.count
    pa = a @ proj.directions.T  # (m, L)
    pb = b @ proj.directions.T
    sa = np.argsort(pa, axis=0, kind="stable")
    sb = np.argsort(pb, axis=0, kind="stable")
    cols = np.arange(n_proj)
    diff = pa[sa, cols] - pb[sb, cols]  # row i: i-th smallest of a minus i-th smallest of b
    sq = diff * diff
    per_projection = np.array([math.fsum(sq[:, l]) / m for l in range(n_proj)])
    value = _mean_exact(per_projection)

    if with_grad:
        ga = np.zeros_like(pa)
        gb = np.zeros_like(pb)
        ga[sa, cols] = diff
        gb[sb, cols] = diff
        scale = 2.0 / (n_proj * m)
        grad_a = scale * (ga @ proj.directions)
        grad_b = -scale * (gb @ proj.directions)
    else:
        grad_a = grad_b = None
    return SwdResult(value, per_projection, grad_a, grad_b)
