"""Class-conditional Gaussian mixture over the embedding space.

Because source labels are known, every mixture component is fitted in closed
form from the embeddings of one class: weight = class frequency, mean =
class mean, covariance = class scatter divided by the class size (biased),
plus ``eps * I`` so the factorization never fails on collapsed clusters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EstimationError
from .ndcore import FLOAT, cholesky

DEFAULT_EPS = 1e-4


@dataclass
class GmmModel:
    weights: np.ndarray  # (k,)
    means: np.ndarray  # (k, F)
    covs: np.ndarray  # (k, F, F)
    chols: np.ndarray  # (k, F, F) lower factors
    eps: float = DEFAULT_EPS
    diagonal: bool = False

    @property
    def k(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @classmethod
    def from_components(cls, weights, means, covs, eps: float = 0.0, diagonal: bool = False) -> "GmmModel":
        weights = np.asarray(weights, dtype=FLOAT)
        means = np.asarray(means, dtype=FLOAT)
        covs = np.asarray(covs, dtype=FLOAT)
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-12:
            raise ValueError("mixture weights must be non-negative and sum to 1")
        chols = np.stack([cholesky(c) for c in covs])
        return cls(weights, means, covs, chols, eps, diagonal)


def _canonical_order(x: np.ndarray) -> np.ndarray:
    # lexicographic row order makes the sums independent of input order
    return x[np.lexsort(x.T[::-1])]


def estimate_map(embeddings, labels, eps: float = DEFAULT_EPS, diagonal: bool = False) -> GmmModel:
    """Closed-form per-class fit of weights, means and covariances.

    Class membership is the argmax of each label row.  Every class needs at
    least two samples.
    """
    z = np.asarray(embeddings, dtype=FLOAT)
    if z.ndim != 2:
        raise EstimationError(f"embeddings must be 2-D, got shape {z.shape}")
    if not np.all(np.isfinite(z)):
        raise EstimationError("embeddings contain non-finite values")
    y = np.asarray(labels, dtype=FLOAT)
    if y.ndim != 2 or y.shape[0] != z.shape[0]:
        raise EstimationError(f"labels {y.shape} do not match embeddings {z.shape}")
    if eps < 0:
        raise ValueError("eps must be non-negative")
    n, dim = z.shape
    k = y.shape[1]
    cls = np.argmax(y, axis=1)
    weights = np.empty(k)
    means = np.empty((k, dim))
    covs = np.empty((k, dim, dim))
    for j in range(k):
        members = _canonical_order(z[cls == j])
        size = members.shape[0]
        if size < 2:
            raise EstimationError(f"class {j} has {size} sample(s); at least 2 are required")
        weights[j] = size / n
        mu = members.sum(axis=0) / size
        centered = members - mu
        cov = centered.T @ centered / size
        if diagonal:
            cov = np.diag(np.diag(cov))
        cov = 0.5 * (cov + cov.T) + eps * np.eye(dim)
        means[j] = mu
        covs[j] = cov
    try:
        chols = np.stack([cholesky(c) for c in covs])
    except Exception as exc:
        raise EstimationError(f"covariance factorization failed; increase eps ({exc})") from exc
    return GmmModel(weights, means, covs, chols, eps, diagonal)


def sample(gmm: GmmModel, rng: np.random.Generator, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``n`` points; returns ``(samples, component_index)``.

    The component indices are diagnostics only.  Components are drawn first
    (inverse-CDF on one uniform per draw), then one standard-normal vector per
    draw.
    """
    if n < 1:
        raise ValueError(f"sample count must be >= 1, got {n}")
    cdf = np.cumsum(gmm.weights)
    cdf[-1] = 1.0
    comp = np.searchsorted(cdf, rng.random(n), side="right")
    noise = rng.standard_normal((n, gmm.dim))
    out = gmm.means[comp] + np.einsum("nij,nj->ni", gmm.chols[comp], noise)
    return out, comp


def component_log_density(gmm: GmmModel, z) -> np.ndarray:
    """``log N(z | mu_j, Sigma_j)`` for each row of ``z`` and component ``j``: shape (n, k)."""
    z = np.atleast_2d(np.asarray(z, dtype=FLOAT))
    out = np.empty((z.shape[0], gmm.k))
    for j in range(gmm.k):
        low = gmm.chols[j]
        sol = np.linalg.solve(low, (z - gmm.means[j]).T)  # triangular, tiny F
        maha = np.sum(sol * sol, axis=0)
        logdet = 2.0 * np.sum(np.log(np.diag(low)))
        out[:, j] = -0.5 * (maha + logdet + gmm.dim * np.log(2.0 * np.pi))
    return out


def log_density(gmm: GmmModel, z) -> float | np.ndarray:
    """Mixture log-density via log-sum-exp; scalar for a single point."""
    single = np.asarray(z).ndim == 1
    comp = component_log_density(gmm, z)
    with np.errstate(divide="ignore"):
        comp = comp + np.log(gmm.weights)
    top = np.max(comp, axis=1, keepdims=True)
    out = top[:, 0] + np.log(np.sum(np.exp(comp - top), axis=1))
    return float(out[0]) if single else out
