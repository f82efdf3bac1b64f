"""Per-image calibration losses for the confidence, localization and
classification tasks, plus the aggregation strategies for object-level
classification misses.

All losses are pure functions of one image sample, the relevant parameters
and a precomputed matching, and take values in [0, 1]. Two edge rules apply
uniformly: an image without ground-truth objects contributes loss 0, and an
image with ground truths but no selected predictions contributes the maximal
loss 1.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

from .geometry import BoundingBox, area, contains, intersect
from .matching import MatchingAssignment

__all__ = [
    "CONF_LOSS_KINDS",
    "LOC_LOSS_KINDS",
    "AGGREGATION_KINDS",
    "Detection",
    "ImageSample",
    "LossSpec",
    "conf_loss",
    "loc_loss",
    "cls_loss",
    "aggregate",
]

CONF_LOSS_KINDS = ("box_count_threshold", "box_count_recall")
LOC_LOSS_KINDS = ("thresholded", "boxwise", "pixelwise")
AGGREGATION_KINDS = ("average", "max", "thresholded")


@dataclass(frozen=True)
class Detection:
    """One predicted object: box, class probability vector, confidence score."""

    box: BoundingBox
    probs: tuple[float, ...]
    confidence: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "probs", tuple(self.probs))
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence must lie in [0, 1], got {self.confidence}")


@dataclass(frozen=True)
class ImageSample:
    """One image's ground-truth objects and its pre-filtered detections.

    Detections are re-sorted by descending confidence at construction, so a
    confidence threshold always selects a prefix.
    """

    image_id: str
    ground_truths: tuple[tuple[BoundingBox, int], ...]
    detections: tuple[Detection, ...]

    def __post_init__(self) -> None:
        gts = tuple((box, int(label)) for box, label in self.ground_truths)
        dets = tuple(sorted(self.detections, key=lambda d: -d.confidence))
        object.__setattr__(self, "ground_truths", gts)
        object.__setattr__(self, "detections", dets)

    @property
    def n_ground_truths(self) -> int:
        return len(self.ground_truths)


@dataclass(frozen=True)
class LossSpec:
    """Loss choices for the three tasks.

    ``localization_tau`` only applies to the thresholded localization loss
    (default 1.0: every box must be covered); ``aggregation_tau`` only to the
    thresholded classification aggregation.
    """

    confidence_kind: str = "box_count_threshold"
    localization_kind: str = "boxwise"
    localization_tau: float = 1.0
    classification_aggregation: str = "average"
    aggregation_tau: float = 0.5

    def __post_init__(self) -> None:
        if self.confidence_kind not in CONF_LOSS_KINDS:
            raise ValueError(f"unknown confidence loss kind {self.confidence_kind!r}")
        if self.localization_kind not in LOC_LOSS_KINDS:
            raise ValueError(f"unknown localization loss kind {self.localization_kind!r}")
        if self.classification_aggregation not in AGGREGATION_KINDS:
            raise ValueError(
                f"unknown classification aggregation {self.classification_aggregation!r}"
            )
        if not 0.0 <= self.localization_tau <= 1.0:
            raise ValueError(f"localization_tau must lie in [0, 1], got {self.localization_tau}")


def conf_loss(sample: ImageSample, selected_count: int, kind: str) -> float:
    """Confidence loss given how many detections the threshold kept.

    ``box_count_threshold`` penalizes maximally as soon as fewer predictions
    than ground truths survive; ``box_count_recall`` is its proportional
    relaxation ``(n_gt - selected)+ / n_gt``.
    """
    n_gt = sample.n_ground_truths
    if n_gt == 0:
        return 0.0
    if kind == "box_count_threshold":
        return 0.0 if selected_count >= n_gt else 1.0
    if kind == "box_count_recall":
        return max(0, n_gt - selected_count) / n_gt
    raise ValueError(f"unknown confidence loss kind {kind!r}")


def _covered_fraction(gt_box: BoundingBox, margined: BoundingBox) -> float:
    # Area fraction of the ground truth covered by the margined box; a
    # zero-area ground truth counts as fully covered iff it is contained.
    denom = area(gt_box)
    if denom <= 0.0:
        return 1.0 if contains(margined, gt_box) else 0.0
    return area(intersect(gt_box, margined)) / denom


def loc_loss(
    sample: ImageSample,
    matching: MatchingAssignment,
    margined_boxes: Sequence[BoundingBox],
    kind: str,
    tau: float = 1.0,
) -> float:
    """Localization loss of one image under a fixed matching.

    ``margined_boxes`` must be aligned with the selected prediction list the
    matching refers to. ``boxwise`` is one minus the fraction of ground
    truths fully covered by their matched margined box, ``thresholded`` is
    its hard version at level ``tau``, and ``pixelwise`` replaces full
    coverage by the covered area fraction.
    """
    n_gt = sample.n_ground_truths
    if n_gt == 0:
        return 0.0
    if not margined_boxes:
        return 1.0
    if kind == "pixelwise":
        total = 0.0
        for j, (gt_box, _) in enumerate(sample.ground_truths):
            total += _covered_fraction(gt_box, margined_boxes[matching[j]])
        return 1.0 - total / n_gt
    covered = 0
    for j, (gt_box, _) in enumerate(sample.ground_truths):
        if contains(margined_boxes[matching[j]], gt_box):
            covered += 1
    if kind == "boxwise":
        return 1.0 - covered / n_gt
    if kind == "thresholded":
        return 0.0 if covered / n_gt >= tau else 1.0
    raise ValueError(f"unknown localization loss kind {kind!r}")


def cls_loss(
    sample: ImageSample,
    matching: MatchingAssignment,
    class_sets: Sequence[Optional[set]],
    aggregation: str = "average",
    tau: float = 0.5,
) -> float:
    """Classification loss: aggregated per-object misses of the label sets.

    A ground truth is missed when its class is absent from the label set of
    its matched prediction. ``class_sets`` must be aligned with the selected
    prediction list; entries never referenced by the matching may be None.
    """
    n_gt = sample.n_ground_truths
    if n_gt == 0:
        return 0.0
    if not class_sets:
        return 1.0
    misses = [
        1.0 if label not in class_sets[matching[j]] else 0.0
        for j, (_, label) in enumerate(sample.ground_truths)
    ]
    return aggregate(misses, aggregation, tau)


def aggregate(values: Sequence[float], how: str, tau: float = 0.5) -> float:
    """Aggregate per-object loss values into one image-level value.

    ``average`` is the mean, ``max`` the worst case, and ``thresholded``
    indicates whether the mean exceeds ``tau``.
    """
    if not values:
        return 0.0
    if how == "average":
        return sum(values) / len(values)
    if how == "max":
        return max(values)
    if how == "thresholded":
        return 1.0 if sum(values) / len(values) > tau else 0.0
    raise ValueError(f"unknown aggregation {how!r}")
