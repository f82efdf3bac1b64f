"""Shared random-instance builders for the test suite.

Boxes are drawn on an integer pixel lattice by default so that margin and
containment comparisons are exact in floating point; float boxes are used
where exactness is not asserted.
"""

from __future__ import annotations

import numpy as np

from condet import BoundingBox, Detection, ImageSample
from condet.dataio import DatasetFile, ImageRecord, write_dataset_file


def random_int_box(rng: np.random.Generator, span: int = 100) -> BoundingBox:
    x = sorted(int(v) for v in rng.integers(0, span, 2))
    y = sorted(int(v) for v in rng.integers(0, span, 2))
    return BoundingBox(float(x[0]), float(y[0]), float(x[1] + 1), float(y[1] + 1))


def random_float_box(rng: np.random.Generator, span: float = 100.0) -> BoundingBox:
    x = sorted(rng.uniform(0.0, span, 2))
    y = sorted(rng.uniform(0.0, span, 2))
    return BoundingBox(float(x[0]), float(y[0]), float(x[1] + 0.5), float(y[1] + 0.5))


def random_probs(rng: np.random.Generator, k: int) -> tuple[float, ...]:
    probs = rng.dirichlet(np.ones(k))
    return tuple(float(p) for p in probs)


def random_detection(rng: np.random.Generator, k: int = 5, span: float = 100.0) -> Detection:
    return Detection(
        box=random_float_box(rng, span),
        probs=random_probs(rng, k),
        confidence=float(rng.uniform(0.01, 0.999)),
    )


def random_sample(
    rng: np.random.Generator,
    max_gts: int = 5,
    max_dets: int = 6,
    k: int = 5,
    span: float = 100.0,
    min_dets: int = 0,
    image_id: str = "img",
) -> ImageSample:
    n_gt = int(rng.integers(0, max_gts + 1))
    n_det = int(rng.integers(min_dets, max_dets + 1))
    gts = tuple(
        (random_float_box(rng, span), int(rng.integers(0, k))) for _ in range(n_gt)
    )
    dets = tuple(random_detection(rng, k, span) for _ in range(n_det))
    return ImageSample(image_id=image_id, ground_truths=gts, detections=dets)


def samples_to_dataset_file(samples, num_classes: int, path, size: float = 100.0) -> None:
    records = tuple(
        ImageRecord(
            image_id=s.image_id,
            width=size,
            height=size,
            ground_truths=s.ground_truths,
            detections=s.detections,
        )
        for s in samples
    )
    dataset = DatasetFile(
        num_classes=num_classes,
        class_names=tuple(f"class_{k}" for k in range(num_classes)),
        images=records,
    )
    write_dataset_file(dataset, path)
