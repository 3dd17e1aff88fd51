"""Confident pseudo-samples drawn in embedding space.

Points are drawn from the fitted mixture, scored by the frozen classifier,
and kept only when the top class probability is strictly above ``tau``.  The
kept label is the classifier's argmax, not the mixture component.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, InsufficientConfidenceError
from .gmm import GmmModel, sample
from .ndcore import one_hot
from .netcore import NetworkParams, forward_classifier

log = logging.getLogger(__name__)

DRAW_ROUND = 1024
MAX_DRAWS_FACTOR = 50


@dataclass
class PseudoDataset:
    samples: np.ndarray  # (N_p, F)
    labels: np.ndarray  # (N_p, k) one-hot
    confidences: np.ndarray  # (N_p,)
    acceptance_rate: float
    tau: float
    draw_index: np.ndarray  # position of each kept sample in the draw stream
    attempted: int
    components: np.ndarray  # mixture component each sample came from (diagnostic)

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def per_class_counts(self) -> list[int]:
        return np.bincount(np.argmax(self.labels, axis=1), minlength=self.labels.shape[1]).tolist()


def generate(
    gmm: GmmModel,
    params: NetworkParams,
    tau: float,
    target_count: int,
    rng: np.random.Generator,
    max_draws: int | None = None,
) -> PseudoDataset:
    """Rejection-sample ``target_count`` confident pseudo-points.

    Draws come in rounds of DRAW_ROUND regardless of ``tau``, so two calls
    sharing a seed see the same draw stream.  Drawing stops once
    ``target_count`` points are accepted or ``max_draws`` (default
    50 * target_count) have been examined.  Fewer than
    ``max(1, target_count // 10)`` acceptances is an error.
    """
    if not 0.0 < tau < 1.0:
        raise ValueError(f"tau must lie in (0, 1), got {tau}")
    if target_count < 1:
        raise ValueError("target_count must be >= 1")
    if gmm.dim != params.embed_dim or gmm.k != params.n_classes:
        raise DimensionError(
            f"mixture has dim={gmm.dim}, k={gmm.k}; classifier expects dim={params.embed_dim}, k={params.n_classes}"
        )
    if max_draws is None:
        max_draws = MAX_DRAWS_FACTOR * target_count

    kept_z, kept_p, kept_idx, kept_comp = [], [], [], []
    n_kept = 0
    drawn = 0
    attempted = 0
    while attempted < max_draws and n_kept < target_count:
        z, comp = sample(gmm, rng, DRAW_ROUND)
        usable = min(DRAW_ROUND, max_draws - drawn)
        z, comp = z[:usable], comp[:usable]
        probs = forward_classifier(params, z)
        ok = np.flatnonzero(np.max(probs, axis=1) > tau)
        need = target_count - n_kept
        if ok.size >= need:
            ok = ok[:need]
            attempted = drawn + int(ok[-1]) + 1
        else:
            attempted = drawn + usable
        kept_z.append(z[ok])
        kept_p.append(probs[ok])
        kept_idx.append(ok + drawn)
        kept_comp.append(comp[ok])
        n_kept += ok.size
        drawn += usable

    k = params.n_classes
    probs = np.concatenate(kept_p) if kept_p else np.empty((0, k))
    pred = np.argmax(probs, axis=1)
    per_class = np.bincount(pred, minlength=k).tolist()
    rate = n_kept / attempted if attempted else 0.0
    log.info("pseudo-dataset: kept %d of %d draws (rate %.4f), per class %s", n_kept, attempted, rate, per_class)
    if n_kept < max(1, target_count // 10):
        raise InsufficientConfidenceError(
            f"only {n_kept} of {attempted} draws exceeded tau={tau}", rate, per_class
        )
    return PseudoDataset(
        samples=np.concatenate(kept_z),
        labels=one_hot(pred, k),
        confidences=probs[np.arange(n_kept), pred],
        acceptance_rate=rate,
        tau=tau,
        draw_index=np.concatenate(kept_idx),
        attempted=attempted,
        components=np.concatenate(kept_comp),
    )
