"""Seeded synthetic detection problems and the Monte Carlo guarantee check.

The generator emits images whose detections are noisy copies of the ground
truths plus uniformly placed false positives. Confidence is negatively
correlated with the box noise actually drawn, so the confidence threshold is
informative, and every image carries at least one detection (and at least as
many as it has objects), which keeps the losses vanishing at the loosest
parameters.

``monte_carlo_validate`` repeatedly draws calibration/test splits from the
same distribution, calibrates, and averages the test risks across trials:
the across-trial mean of each risk must stay below its target level.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .calibration import CalibrationConfig, InfeasibleRiskError, calibrate
from .geometry import BoundingBox
from .inference_metrics import evaluate
from .losses import Detection, ImageSample

__all__ = [
    "SynthSpec",
    "TaskSummary",
    "ValidationReport",
    "generate",
    "monte_carlo_validate",
    "report_to_dict",
    "format_report_table",
]


@dataclass(frozen=True)
class SynthSpec:
    """Parameters of the synthetic detection distribution.

    ``confidence_base`` is the logit of a noiseless detection's confidence
    and ``confidence_noise_coupling`` how fast that logit drops per unit of
    normalized corner error. With ``box_noise_std`` 0 the detector is exact:
    boxes coincide with the ground truths and the probability vectors are
    noise-free (argmax at the true class unless flipped).
    """

    seed: int = 0
    n_images: int = 100
    num_classes: int = 8
    image_width: float = 64.0
    image_height: float = 64.0
    objects_min: int = 0
    objects_max: int = 4
    box_noise_std: float = 2.0
    confidence_base: float = 2.0
    confidence_noise_coupling: float = 1.5
    false_positive_rate: float = 0.5
    label_flip_probability: float = 0.05
    softmax_temperature: float = 0.35

    def __post_init__(self) -> None:
        if self.n_images < 1:
            raise ValueError("n_images must be >= 1")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if not 0 <= self.objects_min <= self.objects_max:
            raise ValueError("need 0 <= objects_min <= objects_max")
        if self.box_noise_std < 0:
            raise ValueError("box_noise_std must be >= 0")
        if not 0.0 <= self.label_flip_probability <= 1.0:
            raise ValueError("label_flip_probability must lie in [0, 1]")
        if self.softmax_temperature <= 0.0:
            raise ValueError("softmax_temperature must be > 0")


_CONF_FLOOR = 0.01
_CONF_CEIL = 0.999
_MIN_EXTENT = 1.0


def _sigmoid(x: float) -> float:
    return 1.0 / (1.0 + math.exp(-x))


def _softmax_probs(spec: SynthSpec, rng: np.random.Generator, label: int) -> tuple[float, ...]:
    logits = np.zeros(spec.num_classes)
    logits[label] = 1.0
    if spec.box_noise_std > 0.0:
        logits = logits + rng.normal(0.0, 0.35, spec.num_classes)
    logits /= spec.softmax_temperature
    logits -= logits.max()
    weights = np.exp(logits)
    probs = weights / weights.sum()
    return tuple(float(p) for p in probs)


def _random_gt_box(spec: SynthSpec, rng: np.random.Generator) -> BoundingBox:
    w = rng.uniform(0.12, 0.35) * spec.image_width
    h = rng.uniform(0.12, 0.35) * spec.image_height
    x = rng.uniform(0.0, spec.image_width - w)
    y = rng.uniform(0.0, spec.image_height - h)
    return BoundingBox(x, y, x + w, y + h)


def _noisy_copy(spec: SynthSpec, rng: np.random.Generator, box: BoundingBox):
    if spec.box_noise_std <= 0.0:
        return box, 0.0
    noise = rng.normal(0.0, spec.box_noise_std, 4)
    # Clip to one image-size beyond the canvas: keeps every required margin
    # below a fixed bound (three image sizes), so losses provably vanish at
    # the loosest parameters no matter what the noise draws.
    w, h = spec.image_width, spec.image_height
    x_lo, x_hi = sorted(
        (min(max(box.left + noise[0], -w), 2 * w), min(max(box.right + noise[2], -w), 2 * w))
    )
    y_lo, y_hi = sorted(
        (min(max(box.top + noise[1], -h), 2 * h), min(max(box.bottom + noise[3], -h), 2 * h))
    )
    # Degenerate predicted boxes break GIoU matching and multiplicative
    # margins; expand to a minimal extent when noise collapses a side.
    if x_hi - x_lo < _MIN_EXTENT:
        mid = (x_lo + x_hi) / 2.0
        x_lo, x_hi = mid - _MIN_EXTENT / 2.0, mid + _MIN_EXTENT / 2.0
    if y_hi - y_lo < _MIN_EXTENT:
        mid = (y_lo + y_hi) / 2.0
        y_lo, y_hi = mid - _MIN_EXTENT / 2.0, mid + _MIN_EXTENT / 2.0
    err = float(np.abs(noise).mean()) / spec.box_noise_std
    return BoundingBox(x_lo, y_lo, x_hi, y_hi), err


def _confidence(spec: SynthSpec, rng: np.random.Generator, err: float) -> float:
    logit = spec.confidence_base - spec.confidence_noise_coupling * err
    if spec.box_noise_std > 0.0:
        logit += rng.normal(0.0, 0.3)
    return min(max(_sigmoid(logit), _CONF_FLOOR), _CONF_CEIL)


def generate(spec: SynthSpec) -> list[ImageSample]:
    """Draw a dataset; identical specs produce identical datasets."""
    rng = np.random.default_rng(spec.seed)
    samples = []
    for i in range(spec.n_images):
        n_obj = int(rng.integers(spec.objects_min, spec.objects_max + 1))
        gts = []
        dets = []
        for _ in range(n_obj):
            box = _random_gt_box(spec, rng)
            label = int(rng.integers(spec.num_classes))
            gts.append((box, label))
            det_box, err = _noisy_copy(spec, rng, box)
            det_label = label
            if spec.label_flip_probability > 0.0 and rng.random() < spec.label_flip_probability:
                det_label = int((label + 1 + rng.integers(spec.num_classes - 1)) % spec.num_classes)
            dets.append(
                Detection(
                    box=det_box,
                    probs=_softmax_probs(spec, rng, det_label),
                    confidence=_confidence(spec, rng, err),
                )
            )
        n_fp = int(rng.poisson(spec.false_positive_rate))
        if n_obj == 0 and n_fp == 0:
            n_fp = 1
        for _ in range(n_fp):
            label = int(rng.integers(spec.num_classes))
            dets.append(
                Detection(
                    box=_random_gt_box(spec, rng),
                    probs=_softmax_probs(spec, rng, label),
                    confidence=_confidence(spec, rng, float(rng.uniform(1.5, 3.5))),
                )
            )
        # Loosest-parameter losses vanish only when something is predicted.
        assert len(dets) >= max(1, n_obj)
        samples.append(
            ImageSample(
                image_id=f"synth-{spec.seed}-{i:05d}",
                ground_truths=tuple(gts),
                detections=tuple(dets),
            )
        )
    return samples


# --------------------------------------------------------------------------
# Monte Carlo validation
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class TaskSummary:
    """Across-trial summary of one task's mean test risk."""

    alpha: float
    mean_risk: float
    stderr: float
    frac_trials_above_alpha: float


@dataclass(frozen=True)
class ValidationReport:
    """Across-trial risk summaries; the guarantee binds the means, so the
    per-trial exceedance fractions are diagnostics only."""

    trials: int
    n_cal: int
    n_test: int
    cnf: TaskSummary
    loc: TaskSummary
    cls: TaskSummary
    global_: TaskSummary
    per_trial_risks: tuple[tuple[float, float, float, float], ...]


def _summary(risks: Sequence[float], alpha: float) -> TaskSummary:
    n = len(risks)
    mean = math.fsum(risks) / n
    if n > 1:
        var = math.fsum((r - mean) ** 2 for r in risks) / (n - 1)
        stderr = math.sqrt(var / n)
    else:
        stderr = 0.0
    above = sum(1 for r in risks if r > alpha) / n
    return TaskSummary(alpha=alpha, mean_risk=mean, stderr=stderr, frac_trials_above_alpha=above)


def monte_carlo_validate(
    spec: SynthSpec,
    config: CalibrationConfig,
    trials: int,
    n_cal: int,
    n_test: int,
) -> ValidationReport:
    """Estimate the test risks of the calibrated parameters by simulation.

    Every trial draws ``n_cal + n_test`` fresh images from a sub-seed derived
    from ``spec.seed``, calibrates on the first part and measures mean test
    losses on the rest. Calibration infeasibility in any trial is re-raised
    with the trial index attached.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    children = np.random.SeedSequence(spec.seed).spawn(trials)
    rows = []
    for t in range(trials):
        trial_seed = int(children[t].generate_state(1)[0])
        trial_spec = replace(spec, seed=trial_seed, n_images=n_cal + n_test)
        samples = generate(trial_spec)
        try:
            result = calibrate(samples[:n_cal], config)
        except InfeasibleRiskError as exc:
            raise InfeasibleRiskError(f"trial {t}: {exc}") from exc
        report = evaluate(samples[n_cal:], result)
        rows.append((report.cnf_risk, report.loc_risk, report.cls_risk, report.global_risk))
    return ValidationReport(
        trials=trials,
        n_cal=n_cal,
        n_test=n_test,
        cnf=_summary([r[0] for r in rows], config.alpha_cnf),
        loc=_summary([r[1] for r in rows], config.alpha_loc),
        cls=_summary([r[2] for r in rows], config.alpha_cls),
        global_=_summary([r[3] for r in rows], config.alpha_loc + config.alpha_cls),
        per_trial_risks=tuple(rows),
    )


def report_to_dict(report: ValidationReport) -> dict:
    def task(summary: TaskSummary) -> dict:
        return {
            "alpha": summary.alpha,
            "mean_risk": summary.mean_risk,
            "stderr": summary.stderr,
            "frac_trials_above_alpha": summary.frac_trials_above_alpha,
        }

    return {
        "trials": report.trials,
        "n_cal": report.n_cal,
        "n_test": report.n_test,
        "confidence": task(report.cnf),
        "localization": task(report.loc),
        "classification": task(report.cls),
        "global": task(report.global_),
        "per_trial_risks": [list(row) for row in report.per_trial_risks],
    }


def format_report_table(report: ValidationReport) -> str:
    """Render the across-trial summaries as an aligned text table."""
    header = f"{'task':<16}{'target':>10}{'mean risk':>12}{'stderr':>10}{'frac>target':>13}"
    lines = [
        f"trials={report.trials}  n_cal={report.n_cal}  n_test={report.n_test}",
        header,
        "-" * len(header),
    ]
    for name, summary in (
        ("confidence", report.cnf),
        ("localization", report.loc),
        ("classification", report.cls),
        ("global(max)", report.global_),
    ):
        lines.append(
            f"{name:<16}{summary.alpha:>10.4f}{summary.mean_risk:>12.5f}"
            f"{summary.stderr:>10.5f}{summary.frac_trials_above_alpha:>13.3f}"
        )
    return "\n".join(lines)
