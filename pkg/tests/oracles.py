"""Independent grid-search implementations of the calibration rules.

These deliberately avoid the library's sweep engine: selection, matching and
losses are evaluated through the public pure functions, the monotonization
supremum is taken by brute force over an explicit point set, and the infima
are located by scanning a fixed grid. They exist solely to cross-check
``seqcrc_step1`` / ``seqcrc_step2``.
"""

from __future__ import annotations

import math

from condet import match
from condet.calibration import CalibrationConfig
from condet.losses import cls_loss, conf_loss, loc_loss
from condet.predsets import apply_margin, build_class_set, select_confident


def pure_image_losses(sample, lam_cnf, lam_loc, lam_cls, config: CalibrationConfig):
    """(confidence, localization, classification) losses via the public path."""
    sel = select_confident(sample, lam_cnf)
    preds = [(sample.detections[k].box, sample.detections[k].probs) for k in sel]
    assignment = match(sample.ground_truths, preds, config.match_spec)
    margined = [
        apply_margin(box, lam_loc, config.predset_spec.localization_kind) for box, _ in preds
    ]
    sets = [
        build_class_set(probs, lam_cls, config.predset_spec.classification_kind)
        for _, probs in preds
    ]
    spec = config.loss_spec
    return (
        conf_loss(sample, len(sel), spec.confidence_kind),
        loc_loss(sample, assignment, margined, spec.localization_kind, spec.localization_tau),
        cls_loss(sample, assignment, sets, spec.classification_aggregation, spec.aggregation_tau),
    )


def confidence_visit_points(samples) -> list[float]:
    """Evaluation points of the downward confidence sweep: 1, every value of
    1 - confidence in decreasing order, then 0."""
    bps = sorted(
        {1.0 - d.confidence for s in samples for d in s.detections}, reverse=True
    )
    points = [1.0] + [b for b in bps if b < 1.0]
    if points[-1] > 0.0:
        points.append(0.0)
    return points


def grid_step1_oracle(samples, config: CalibrationConfig, grid_step: float = 1e-3):
    """Grid-search the two confidence rules with brute-force monotonization.

    Returns ``(lam_plus, lam_minus)``: the smallest grid points satisfying the
    corrected / uncorrected constraints, or 1.0 when none does.
    """
    n = len(samples)
    alpha = config.alpha_cnf
    lam_loc_bar = config.lambda_loc_bounds[1]
    lam_cls_bar = config.lambda_cls_bounds[1]
    steps = round(1.0 / grid_step)
    grid = {k / steps for k in range(steps + 1)}
    points = sorted(grid | set(confidence_visit_points(samples)), reverse=True)
    mono_loc = [-math.inf] * n
    mono_cls = [-math.inf] * n
    cnf = [0.0] * n
    plus = None
    minus = None
    for p in points:
        for i, sample in enumerate(samples):
            c, lo, cl = pure_image_losses(sample, p, lam_loc_bar, lam_cls_bar, config)
            cnf[i] = c
            mono_loc[i] = max(mono_loc[i], lo)
            mono_cls[i] = max(mono_cls[i], cl)
        if p in grid:
            risk = max(sum(cnf), sum(mono_loc), sum(mono_cls)) / n
            if n * risk / (n + 1) + 1.0 / (n + 1) <= alpha:
                plus = p
            if n * risk / (n + 1) <= alpha:
                minus = p
    return (1.0 if plus is None else plus, 1.0 if minus is None else minus)


def grid_step2_oracle(
    samples,
    lam_minus: float,
    task: str,
    config: CalibrationConfig,
    grid_points: int = 1000,
):
    """Grid-search the second-step rule at ``grid_points + 1`` candidates.

    The per-image monotonized loss is the maximum of the pure loss over the
    sweep's evaluation points down to (and including) the first one at or
    below ``lam_minus``. Returns the smallest feasible candidate or None.
    """
    n = len(samples)
    if task == "loc":
        alpha = config.alpha_loc
        lo, hi = config.lambda_loc_bounds
    else:
        alpha = config.alpha_cls
        lo, hi = config.lambda_cls_bounds
    visited = []
    for p in confidence_visit_points(samples):
        visited.append(p)
        if p <= lam_minus:
            break
    # Selection and matching depend on the sweep point only, not on the
    # candidate; compute each image's distinct selection states once.
    states: list[list[tuple]] = []
    for sample in samples:
        row = []
        prev_len = None
        for p in visited:
            sel = select_confident(sample, p)
            if prev_len == len(sel):
                continue
            prev_len = len(sel)
            preds = [(sample.detections[k].box, sample.detections[k].probs) for k in sel]
            row.append((preds, match(sample.ground_truths, preds, config.match_spec)))
        states.append(row)
    spec = config.loss_spec
    loc_kind = config.predset_spec.localization_kind
    cls_kind = config.predset_spec.classification_kind
    for k in range(grid_points + 1):
        cand = lo + (hi - lo) * k / grid_points
        total = 0.0
        for i, sample in enumerate(samples):
            worst = 0.0
            for preds, assignment in states[i]:
                if task == "loc":
                    margined = [apply_margin(box, cand, loc_kind) for box, _ in preds]
                    value = loc_loss(
                        sample, assignment, margined, spec.localization_kind,
                        spec.localization_tau,
                    )
                else:
                    sets = [build_class_set(pr, cand, cls_kind) for _, pr in preds]
                    value = cls_loss(
                        sample, assignment, sets, spec.classification_aggregation,
                        spec.aggregation_tau,
                    )
                if value > worst:
                    worst = value
            total += worst
        risk = total / n
        if n * risk / (n + 1) + 1.0 / (n + 1) <= alpha:
            return cand
    return None
