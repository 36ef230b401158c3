"""Uncertainty-aware selection and re-weighting of noisy contrastive tags.

Ranked tag lists are noisy: a relevant tag can land on the negative side
(false negative) and an irrelevant one on the positive side (false
positive). Each region votes for its most cosine-correlated tag; the set H
of winners corroborates tags that some region actually depicts. Positives
survive only if corroborated (Wp & H), negatives are dropped when
corroborated (Wn - H), and each side is cyclically oversampled back to K.
Surviving positives are weighted by q = exp(best region cosine) * p(t),
combining local (region-tag) and global (image-tag) evidence.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .core import ContrastiveInstance, as_matrix, as_vector
from .errors import DegenerateEmbeddingError, ValidationError

__all__ = [
    "UasrResult",
    "local_uncertainty",
    "retrieve_top_tags",
    "select",
    "reweight",
    "apply_uasr",
]

SCORE_FLOOR = 1e-6  # non-positive global cosines are clamped here


@dataclass
class UasrResult:
    """Filtered tag sets, per-positive weights, and the retrieval bookkeeping.

    Index fields refer to rows of the source instance; ``retrieved_set``
    holds indices into the concatenated positives+negatives pool, so a
    negative with source index i occupies pool slot K + i. Fallback flags
    record the degenerate cases where a side had no survivors (positives
    revert to the originals; negatives keep only the lowest-ranked entry).
    """

    positives_filtered: np.ndarray  # (K, d)
    negatives_filtered: np.ndarray  # (K, d)
    weights: np.ndarray             # (K,)
    retrieved_set: np.ndarray       # pool indices, sorted ascending
    positive_indices: np.ndarray    # (K,) rows into instance.positives
    negative_indices: np.ndarray    # (K,) rows into instance.negatives
    positive_fallback: bool = False
    negative_fallback: bool = False

    def __post_init__(self):
        k = self.positives_filtered.shape[0]
        if self.negatives_filtered.shape[0] != k or self.weights.shape != (k,):
            raise ValidationError("filtered sets and weights must all have K entries")
        if not np.isfinite(self.weights).all() or (self.weights <= 0.0).any():
            raise ValidationError("weights must be positive and finite")
        if not self.negative_fallback:
            pool = set((self.negative_indices + k).tolist())
            if pool & set(self.retrieved_set.tolist()):
                raise ValidationError("kept negatives must not appear in the retrieved set")


def local_uncertainty(v, w) -> float:
    """Cosine similarity between a region and a tag embedding."""
    v = as_vector(v, "region")
    w = as_vector(w, "tag")
    nv, nw = np.linalg.norm(v), np.linalg.norm(w)
    if nv == 0.0 or nw == 0.0:
        raise DegenerateEmbeddingError("cosine undefined for zero-norm vectors")
    return float(v @ w / (nv * nw))


def _cosine_matrix(rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    rn = np.linalg.norm(rows, axis=1)
    cn = np.linalg.norm(cols, axis=1)
    if (rn == 0.0).any() or (cn == 0.0).any():
        raise DegenerateEmbeddingError("cosine undefined for zero-norm rows")
    return (rows @ cols.T) / np.outer(rn, cn)


def retrieve_top_tags(regions, all_tags) -> np.ndarray:
    """Indices of each region's most-correlated tag, de-duplicated and sorted.

    Ties go to the lowest tag index.
    """
    regions = as_matrix(regions, "regions")
    all_tags = as_matrix(all_tags, "all_tags")
    winners = np.argmax(_cosine_matrix(regions, all_tags), axis=1)
    return np.unique(winners)


def _cycle_to(picked: list, k: int) -> list:
    return [picked[i % len(picked)] for i in range(k)]


def select(positive_indices, negative_indices, retrieved) -> tuple[list, list, bool, bool]:
    """Filter both sides against the retrieved set and oversample back to K.

    Positives keep members present in ``retrieved``; negatives drop theirs.
    Values may be any hashables (pool indices, tag ids). Survivors are
    cycled in their original order until each side regains its input
    length. Empty-survivor fallbacks: positives revert to the original
    side, negatives keep only the last (lowest-ranked, assuming the usual
    descending-score order) entry.

    Returns (positives_kept, negatives_kept, positive_fallback, negative_fallback).
    """
    retrieved = set(retrieved)
    pos = list(positive_indices)
    neg = list(negative_indices)

    pos_kept = [i for i in pos if i in retrieved]
    pos_fallback = not pos_kept
    if pos_fallback:
        pos_kept = pos

    neg_kept = [i for i in neg if i not in retrieved]
    neg_fallback = not neg_kept
    if neg_fallback:
        neg_kept = [neg[-1]]

    return _cycle_to(pos_kept, len(pos)), _cycle_to(neg_kept, len(neg)), pos_fallback, neg_fallback


def _weights_from(best_cosine: np.ndarray, scores: np.ndarray, normalize: bool) -> np.ndarray:
    q1 = np.exp(best_cosine)
    if (scores <= 0.0).any():
        warnings.warn(
            f"{int((scores <= 0.0).sum())} non-positive global score(s) clamped to {SCORE_FLOOR}",
            stacklevel=3,
        )
    q2 = np.maximum(scores, SCORE_FLOOR)
    q = q1 * q2
    if normalize:
        q = q / q.mean()
    return q


def reweight(positives_filtered, regions, global_scores, normalize: bool = True) -> np.ndarray:
    """Per-positive confidence weights q = exp(best region cosine) * p(t).

    ``global_scores`` must be row-aligned with ``positives_filtered`` (the
    caller carries them through selection and oversampling). Non-positive
    global scores are clamped to a small epsilon with a warning, since a
    non-positive weight would flip the loss sign. With ``normalize`` the
    weights are rescaled to mean 1 so the weighted loss magnitude stays
    comparable to the unweighted one.
    """
    wp = as_matrix(positives_filtered, "positives_filtered")
    regions = as_matrix(regions, "regions")
    scores = np.asarray(global_scores, dtype=np.float64)
    if scores.shape != (wp.shape[0],):
        raise ValidationError("global_scores must align with positives_filtered rows")
    best = _cosine_matrix(regions, wp).max(axis=0)
    return _weights_from(best, scores, normalize)


def apply_uasr(instance: ContrastiveInstance, normalize: bool = True) -> UasrResult:
    """Run retrieval, selection, and re-weighting on one instance.

    The region-to-pool cosine matrix is computed once and reused for both
    the retrieval argmax and the best-region factor of the weights.
    """
    k = instance.num_positives
    pool = np.vstack([instance.positives, instance.negatives])
    cos = _cosine_matrix(instance.regions, pool)
    retrieved = np.unique(np.argmax(cos, axis=1))

    pos_kept, neg_kept, pos_fb, neg_fb = select(
        range(k), range(k, 2 * k), retrieved.tolist()
    )
    positive_indices = np.asarray(pos_kept, dtype=int)
    negative_indices = np.asarray(neg_kept, dtype=int) - k

    wp_bar = instance.positives[positive_indices]
    wn_bar = instance.negatives[negative_indices]
    weights = _weights_from(
        cos[:, positive_indices].max(axis=0),
        instance.global_scores[positive_indices],
        normalize,
    )
    return UasrResult(
        positives_filtered=wp_bar,
        negatives_filtered=wn_bar,
        weights=weights,
        retrieved_set=retrieved,
        positive_indices=positive_indices,
        negative_indices=negative_indices,
        positive_fallback=pos_fb,
        negative_fallback=neg_fb,
    )
