"""Distances over (box, class) pairs and the ground-truth -> prediction matching rule.

Each ground truth on an image is matched to its nearest prediction among the
currently selected ones, under a configurable distance. The matching is not
injective: several ground truths may share a prediction.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

from .geometry import BoundingBox, giou_distance, hausdorff_distance

__all__ = [
    "MATCH_KINDS",
    "MatchDistanceSpec",
    "MatchingAssignment",
    "lac_distance",
    "mix_distance",
    "pair_distance",
    "match",
]

MATCH_KINDS = ("hausdorff", "lac", "giou", "mix")

#: Per ground-truth index, the index of its matched prediction in the
#: selected list, or None when no prediction is available.
MatchingAssignment = tuple  # of Optional[int], one entry per ground truth


@dataclass(frozen=True)
class MatchDistanceSpec:
    """Which distance drives the matching; ``tau`` is only used by ``mix``."""

    kind: str
    tau: float = 0.25

    def __post_init__(self) -> None:
        if self.kind not in MATCH_KINDS:
            raise ValueError(f"unknown matching kind {self.kind!r}; expected one of {MATCH_KINDS}")
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError(f"tau must lie in [0, 1], got {self.tau}")


def lac_distance(true_class: int, probs: Sequence[float]) -> float:
    """One minus the probability the prediction assigns to the true class."""
    if not 0 <= true_class < len(probs):
        raise ValueError(f"class label {true_class} outside range [0, {len(probs)})")
    return 1.0 - probs[true_class]


def mix_distance(
    gt: tuple[BoundingBox, int],
    pred: tuple[BoundingBox, Sequence[float]],
    tau: float,
) -> float:
    """Convex combination ``tau * lac + (1 - tau) * hausdorff``.

    The pixel-valued Hausdorff term is deliberately not rescaled, so the mix
    is unit-inhomogeneous; small ``tau`` values keep it useful in practice.
    """
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must lie in [0, 1], got {tau}")
    gt_box, gt_class = gt
    pred_box, pred_probs = pred
    return tau * lac_distance(gt_class, pred_probs) + (1.0 - tau) * hausdorff_distance(gt_box, pred_box)


def pair_distance(
    gt: tuple[BoundingBox, int],
    pred: tuple[BoundingBox, Sequence[float]],
    spec: MatchDistanceSpec,
) -> float:
    """Distance between one ground truth and one prediction under ``spec``."""
    if spec.kind == "hausdorff":
        return hausdorff_distance(gt[0], pred[0])
    if spec.kind == "lac":
        return lac_distance(gt[1], pred[1])
    if spec.kind == "giou":
        return giou_distance(gt[0], pred[0])
    return mix_distance(gt, pred, spec.tau)


def match(
    gts: Sequence[tuple[BoundingBox, int]],
    preds: Sequence[tuple[BoundingBox, Sequence[float]]],
    spec: MatchDistanceSpec,
) -> MatchingAssignment:
    """Assign every ground truth to its nearest prediction.

    Ties are broken by the lowest prediction index, which keeps the result
    deterministic and order-stable across platforms. An empty prediction
    list yields an all-``None`` assignment.

    Parameters
    ----------
    gts : sequence of (box, class label)
    preds : sequence of (box, probability vector)
    spec : MatchDistanceSpec

    Returns
    -------
    MatchingAssignment
        One optional prediction index per ground truth.
    """
    if not preds:
        return tuple(None for _ in gts)
    assignment: list[Optional[int]] = []
    for gt in gts:
        best_idx = 0
        best_dist = pair_distance(gt, preds[0], spec)
        for idx in range(1, len(preds)):
            d = pair_distance(gt, preds[idx], spec)
            if d < best_dist:
                best_dist = d
                best_idx = idx
        assignment.append(best_idx)
    return tuple(assignment)
