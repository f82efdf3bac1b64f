"""Risk-controlled parameter calibration.

``crc_calibrate`` tunes a single parameter so that a conservatively corrected
empirical risk stays below a target level. ``calibrate`` runs the two-step
sequential procedure for detection: a confidence-threshold step that yields a
conservative/optimistic parameter pair, followed by independent localization
and classification steps that reuse the optimistic threshold.

Losses for the second step are not necessarily monotone in the confidence
parameter (the matching changes as detections enter the selected list), so
the sweeps replace them on the fly with their running suprema over all larger
confidence parameters; the sweep visits confidence breakpoints in decreasing
order, which makes the running maximum exactly that supremum.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

from .losses import ImageSample, LossSpec, aggregate
from .matching import MatchDistanceSpec, match
from .predsets import (
    PredSetSpec,
    apply_margin,
    class_miss_cutoff,
    margin_to_cover,
)
from .geometry import area, contains, intersect

__all__ = [
    "CalibrationPreconditionError",
    "InfeasibleRiskError",
    "StepLossCurve",
    "CalibrationConfig",
    "CalibrationResult",
    "crc_calibrate",
    "default_lambda_loc_bounds",
    "resolve_config",
    "seqcrc_step1",
    "seqcrc_step2",
    "calibrate",
]


class CalibrationPreconditionError(ValueError):
    """The requested error levels cannot carry a finite-sample guarantee."""


class InfeasibleRiskError(RuntimeError):
    """No parameter value satisfies the corrected risk constraint."""


# --------------------------------------------------------------------------
# Baseline: single-parameter risk control
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class StepLossCurve:
    """Non-increasing, right-continuous step function of a scalar parameter.

    ``values`` has one more entry than ``thresholds``; the function equals
    ``values[j]`` on ``[thresholds[j-1], thresholds[j])``, so the value at a
    threshold is the one of the piece starting there.
    """

    thresholds: tuple[float, ...]
    values: tuple[float, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "thresholds", tuple(self.thresholds))
        object.__setattr__(self, "values", tuple(self.values))
        if len(self.values) != len(self.thresholds) + 1:
            raise ValueError("need exactly one more value than thresholds")
        if any(a > b for a, b in zip(self.thresholds, self.thresholds[1:])):
            raise ValueError("thresholds must be sorted ascending")
        if any(a < b for a, b in zip(self.values, self.values[1:])):
            raise ValueError("step values must be non-increasing")

    def value_at(self, lam: float) -> float:
        return self.values[bisect_right(self.thresholds, lam)]

    @classmethod
    def binary(cls, score: float) -> "StepLossCurve":
        """Indicator loss that is 1 below ``score`` and 0 from it on."""
        return cls((score,), (1.0, 0.0))


def crc_calibrate(
    loss_curves: Sequence[StepLossCurve],
    alpha: float,
    loss_bound: float,
    lambda_domain: tuple[float, float],
) -> float:
    """Smallest parameter whose corrected empirical risk is below ``alpha``.

    Feasibility of the candidate ``lam`` means
    ``(1/(n+1)) * sum_i L_i(lam) + loss_bound/(n+1) <= alpha``. Since the
    curves are step functions, the infimum is attained at a curve breakpoint
    or at the domain minimum; the scan therefore only visits those points.

    Raises
    ------
    InfeasibleRiskError
        When ``alpha < loss_bound/(n+1)`` (no parameter can ever satisfy the
        constraint) or when no candidate in the domain is feasible.
    """
    n = len(loss_curves)
    if n == 0:
        raise ValueError("empty calibration set")
    lo, hi = lambda_domain
    if lo > hi:
        raise ValueError(f"invalid domain ({lo}, {hi})")
    if alpha * (n + 1) < loss_bound:
        raise InfeasibleRiskError(
            f"alpha={alpha} is below the finite-sample floor "
            f"{loss_bound}/(n+1)={loss_bound / (n + 1):.6g}"
        )
    candidates = sorted(
        {lo, hi} | {t for curve in loss_curves for t in curve.thresholds if lo < t <= hi}
    )
    for cand in candidates:
        total = sum(curve.value_at(cand) for curve in loss_curves)
        if total + loss_bound <= alpha * (n + 1):
            return cand
    raise InfeasibleRiskError(
        "no feasible parameter in the domain; loss curves do not vanish at the upper endpoint"
    )


# --------------------------------------------------------------------------
# Configuration and result types
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class CalibrationConfig:
    """Frozen description of one calibration run.

    ``lambda_loc_bounds`` may be left as None, in which case it is resolved
    from the data at calibration time (see ``default_lambda_loc_bounds``).
    ``finite_sample_correction`` exists as a negative-control hook for the
    validation harness: disabling it voids the guarantee on purpose.
    """

    alpha_cnf: float
    alpha_loc: float
    alpha_cls: float
    loss_spec: LossSpec = field(default_factory=LossSpec)
    predset_spec: PredSetSpec = field(default_factory=PredSetSpec)
    match_spec: MatchDistanceSpec = field(default_factory=lambda: MatchDistanceSpec("hausdorff"))
    lambda_loc_bounds: Optional[tuple[float, float]] = None
    lambda_cls_bounds: tuple[float, float] = (0.0, 1.0)
    binary_search_steps: int = 32
    prefilter_threshold: float = 1e-3
    finite_sample_correction: bool = True

    def __post_init__(self) -> None:
        for name in ("alpha_cnf", "alpha_loc", "alpha_cls"):
            value = getattr(self, name)
            if not 0.0 < value < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {value}")
        if self.binary_search_steps < 1:
            raise ValueError("binary_search_steps must be >= 1")
        for name in ("lambda_loc_bounds", "lambda_cls_bounds"):
            bounds = getattr(self, name)
            if bounds is not None:
                object.__setattr__(self, name, (float(bounds[0]), float(bounds[1])))
                lo, hi = getattr(self, name)
                if not 0.0 <= lo < hi:
                    raise ValueError(f"{name} must satisfy 0 <= lower < upper, got {bounds}")
        if self.lambda_cls_bounds[1] > 1.0:
            raise ValueError("lambda_cls_bounds must stay within [0, 1]")


@dataclass(frozen=True)
class CalibrationResult:
    """The four tuned parameters plus the frozen configuration behind them."""

    lambda_cnf_plus: float
    lambda_cnf_minus: float
    lambda_loc_plus: float
    lambda_cls_plus: float
    config: CalibrationConfig
    n_calibration: int
    diagnostics: dict

    def __post_init__(self) -> None:
        if self.lambda_cnf_minus > self.lambda_cnf_plus:
            raise AssertionError(
                "optimistic confidence parameter exceeds the conservative one"
            )


def default_lambda_loc_bounds(
    samples: Sequence[ImageSample], localization_kind: str
) -> tuple[float, float]:
    """Data-derived search interval for the localization parameter.

    For additive margins the upper bound is the coordinate span of the data
    plus one pixel, which is enough for any matched box to cover any ground
    truth; for multiplicative margins a fixed 3.0 (triple-size expansion per
    side) covers every practically relevant correction.
    """
    if localization_kind == "multiplicative":
        return (0.0, 3.0)
    hi = 0.0
    lo = 0.0
    seen = False
    for sample in samples:
        boxes = [box for box, _ in sample.ground_truths]
        boxes.extend(det.box for det in sample.detections)
        for box in boxes:
            seen = True
            hi = max(hi, box.right, box.bottom)
            lo = min(lo, box.left, box.top)
    if not seen:
        return (0.0, 1.0)
    return (0.0, (hi - lo) + 1.0)


def resolve_config(
    config: CalibrationConfig, samples: Sequence[ImageSample]
) -> CalibrationConfig:
    """Fill data-dependent defaults so the configuration is fully explicit."""
    if config.lambda_loc_bounds is not None:
        return config
    bounds = default_lambda_loc_bounds(samples, config.predset_spec.localization_kind)
    return replace(config, lambda_loc_bounds=bounds)


# --------------------------------------------------------------------------
# Sweep engine
# --------------------------------------------------------------------------


class _ImageState:
    """Cached per-image arrays for the breakpoint sweeps."""

    __slots__ = ("gts", "det_boxes", "det_probs", "req_lams", "n_gt", "n_det")

    def __init__(self, sample: ImageSample) -> None:
        self.gts = sample.ground_truths
        self.det_boxes = tuple(d.box for d in sample.detections)
        self.det_probs = tuple(d.probs for d in sample.detections)
        # Detections are sorted by descending confidence, so the per-detection
        # selection requirement 1 - confidence is ascending and a threshold
        # always keeps a prefix.
        self.req_lams = tuple(1.0 - d.confidence for d in sample.detections)
        self.n_gt = len(self.gts)
        self.n_det = len(self.det_boxes)


class _SweepEngine:
    """Shared state for the confidence sweep and the second-step searches.

    Matchings and the per-ground-truth coverage/membership cutoffs they
    induce depend only on the selected prefix length, so they are cached per
    (image, prefix length) and reused across all parameter evaluations.
    """

    def __init__(self, samples: Sequence[ImageSample], config: CalibrationConfig) -> None:
        if config.lambda_loc_bounds is None:
            raise ValueError("config must have resolved lambda_loc_bounds")
        self.config = config
        self.images = [_ImageState(s) for s in samples]
        self.n = len(self.images)
        self._match_cache: dict[tuple[int, int], tuple] = {}
        self._loc_req_cache: dict[tuple[int, int], tuple] = {}
        self._loc_boxes_cache: dict[tuple[int, int], tuple] = {}
        self._cls_cutoff_cache: dict[tuple[int, int], tuple] = {}
        self.visits = self._build_visits()

    # -- sweep structure ----------------------------------------------------

    def _build_visits(self) -> tuple:
        """Confidence breakpoints in decreasing parameter order.

        Each visit is ``(lam, affected)``: evaluating at ``lam`` changes the
        selected prefix only of the ``affected`` images (those whose
        detections drop out between the previous breakpoint and this one).
        Duplicate confidence values are merged into a single visit so ties
        are always evaluated jointly.
        """
        owners: dict[float, list[int]] = {}
        for i, img in enumerate(self.images):
            for s in set(img.req_lams):
                owners.setdefault(s, []).append(i)
        values = sorted(owners)
        visits: list[tuple[float, tuple[int, ...]]] = []
        for idx in range(len(values) - 1, -1, -1):
            lam = values[idx]
            if lam >= 1.0:
                continue  # coincides with the initial evaluation at 1
            dropped = values[idx + 1] if idx + 1 < len(values) else None
            affected = tuple(owners[dropped]) if dropped is not None else ()
            visits.append((lam, affected))
        if values and values[0] > 0.0:
            visits.append((0.0, tuple(owners[values[0]])))
        return tuple(visits)

    def count_at(self, i: int, lam: float) -> int:
        """Selected prefix length of image ``i`` at confidence parameter ``lam``."""
        return bisect_right(self.images[i].req_lams, lam)

    # -- cached matchings and loss ingredients -------------------------------

    def _matching(self, i: int, k: int) -> tuple:
        key = (i, k)
        got = self._match_cache.get(key)
        if got is None:
            img = self.images[i]
            preds = [(img.det_boxes[j], img.det_probs[j]) for j in range(k)]
            got = match(img.gts, preds, self.config.match_spec)
            self._match_cache[key] = got
        return got

    def _loc_requirements(self, i: int, k: int) -> tuple:
        key = (i, k)
        got = self._loc_req_cache.get(key)
        if got is None:
            img = self.images[i]
            assignment = self._matching(i, k)
            kind = self.config.predset_spec.localization_kind
            got = tuple(
                margin_to_cover(gt_box, img.det_boxes[assignment[j]], kind)
                for j, (gt_box, _) in enumerate(img.gts)
            )
            self._loc_req_cache[key] = got
        return got

    def _matched_boxes(self, i: int, k: int) -> tuple:
        key = (i, k)
        got = self._loc_boxes_cache.get(key)
        if got is None:
            img = self.images[i]
            assignment = self._matching(i, k)
            got = tuple(img.det_boxes[assignment[j]] for j in range(img.n_gt))
            self._loc_boxes_cache[key] = got
        return got

    def _cls_cutoffs(self, i: int, k: int) -> tuple:
        key = (i, k)
        got = self._cls_cutoff_cache.get(key)
        if got is None:
            img = self.images[i]
            assignment = self._matching(i, k)
            kind = self.config.predset_spec.classification_kind
            got = tuple(
                class_miss_cutoff(img.det_probs[assignment[j]], label, kind)
                for j, (_, label) in enumerate(img.gts)
            )
            self._cls_cutoff_cache[key] = got
        return got

    # -- per-image losses as functions of (prefix length, parameter) ---------

    def conf_loss_at(self, i: int, k: int) -> float:
        img = self.images[i]
        if img.n_gt == 0:
            return 0.0
        if self.config.loss_spec.confidence_kind == "box_count_threshold":
            return 0.0 if k >= img.n_gt else 1.0
        return max(0, img.n_gt - k) / img.n_gt

    def loc_loss_at(self, i: int, k: int, lam: float) -> float:
        img = self.images[i]
        if img.n_gt == 0:
            return 0.0
        if k == 0:
            return 1.0
        spec = self.config.loss_spec
        if spec.localization_kind == "pixelwise":
            kind = self.config.predset_spec.localization_kind
            total = 0.0
            for (gt_box, _), box in zip(img.gts, self._matched_boxes(i, k)):
                margined = apply_margin(box, lam, kind)
                denom = area(gt_box)
                if denom <= 0.0:
                    total += 1.0 if contains(margined, gt_box) else 0.0
                else:
                    total += area(intersect(gt_box, margined)) / denom
            return 1.0 - total / img.n_gt
        covered = sum(1 for req in self._loc_requirements(i, k) if lam >= req)
        if spec.localization_kind == "boxwise":
            return 1.0 - covered / img.n_gt
        return 0.0 if covered / img.n_gt >= spec.localization_tau else 1.0

    def cls_loss_at(self, i: int, k: int, lam: float) -> float:
        img = self.images[i]
        if img.n_gt == 0:
            return 0.0
        if k == 0:
            return 1.0
        spec = self.config.loss_spec
        misses = [1.0 if lam < cutoff else 0.0 for cutoff in self._cls_cutoffs(i, k)]
        return aggregate(misses, spec.classification_aggregation, spec.aggregation_tau)


# --------------------------------------------------------------------------
# Step 1: confidence parameters
# --------------------------------------------------------------------------


def _sweep_confidence(engine: _SweepEngine):
    """Walk the confidence breakpoints downward and locate both stop points.

    Returns ``(lam_plus, lam_minus, trace)`` where the trace holds the
    monotonized combined risk at every visited breakpoint; the conservative
    parameter uses the worst-case correction for the unseen test loss, the
    optimistic one omits it. Exhausting the sweep returns the domain minimum
    0; failing already at the top returns the domain maximum 1.
    """
    cfg = engine.config
    n = engine.n
    alpha = cfg.alpha_cnf
    b_tilde = 1.0 if cfg.finite_sample_correction else 0.0
    lam_loc_bar = cfg.lambda_loc_bounds[1]
    lam_cls_bar = cfg.lambda_cls_bounds[1]

    l_cnf = [engine.conf_loss_at(i, engine.images[i].n_det) for i in range(n)]
    l_loc = [engine.loc_loss_at(i, engine.images[i].n_det, lam_loc_bar) for i in range(n)]
    l_cls = [engine.cls_loss_at(i, engine.images[i].n_det, lam_cls_bar) for i in range(n)]
    s_cnf = sum(l_cnf)
    s_loc = sum(l_loc)
    s_cls = sum(l_cls)

    risk = max(s_cnf, s_loc, s_cls) / n
    trace = [(1.0, risk)]
    bound = alpha * (n + 1)
    lam_plus = 1.0 if n * risk + b_tilde > bound else None
    lam_minus = 1.0 if n * risk > bound else None

    prev = 1.0
    for lam, affected in engine.visits:
        if lam_plus is not None and lam_minus is not None:
            break
        for i in affected:
            k = engine.count_at(i, lam)
            new = engine.conf_loss_at(i, k)
            s_cnf += new - l_cnf[i]
            l_cnf[i] = new
            new = engine.loc_loss_at(i, k, lam_loc_bar)
            if new > l_loc[i]:
                s_loc += new - l_loc[i]
                l_loc[i] = new
            new = engine.cls_loss_at(i, k, lam_cls_bar)
            if new > l_cls[i]:
                s_cls += new - l_cls[i]
                l_cls[i] = new
        risk = max(s_cnf, s_loc, s_cls) / n
        if risk < trace[-1][1] - 1e-9:
            raise AssertionError("monotonized risk decreased along the confidence sweep")
        trace.append((lam, risk))
        if lam_plus is None and n * risk + b_tilde > bound:
            lam_plus = prev
        if lam_minus is None and n * risk > bound:
            lam_minus = prev
        prev = lam
    if lam_plus is None:
        lam_plus = 0.0
    if lam_minus is None:
        lam_minus = 0.0
    return lam_plus, lam_minus, trace


# --------------------------------------------------------------------------
# Step 2: localization / classification parameter
# --------------------------------------------------------------------------


def _second_step(engine: _SweepEngine, lambda_cnf_minus: float, task: str):
    """Binary search for the smallest feasible second-step parameter.

    Each candidate is scored with the monotonized risk: per image, the
    maximum of the task loss over the confidence breakpoints swept downward
    from 1 until the first breakpoint at or below ``lambda_cnf_minus``.
    Returns ``(parameter, risk_at_parameter)``.
    """
    cfg = engine.config
    n = engine.n
    if task == "loc":
        alpha = cfg.alpha_loc
        lo, hi = cfg.lambda_loc_bounds
        loss_at = engine.loc_loss_at
    elif task == "cls":
        alpha = cfg.alpha_cls
        lo, hi = cfg.lambda_cls_bounds
        loss_at = engine.cls_loss_at
    else:
        raise ValueError(f"unknown task {task!r}")
    b = 1.0 if cfg.finite_sample_correction else 0.0
    bound = alpha * (n + 1)

    full_prefix = [(i, engine.images[i].n_det) for i in range(n)]
    updates: list[list[tuple[int, int]]] = []
    for lam, affected in engine.visits:
        updates.append([(i, engine.count_at(i, lam)) for i in affected])
        if lam <= lambda_cnf_minus:
            break

    feasible = None
    feasible_risk = math.nan
    for _ in range(cfg.binary_search_steps):
        cand = (lo + hi) / 2.0
        losses = [loss_at(i, k, cand) for i, k in full_prefix]
        for ups in updates:
            for i, k in ups:
                value = loss_at(i, k, cand)
                if value > losses[i]:
                    losses[i] = value
        risk = sum(losses) / n
        if n * risk + b <= bound:
            feasible = cand
            feasible_risk = risk
            hi = cand
        else:
            lo = cand
    if feasible is None:
        raise InfeasibleRiskError(
            f"no feasible {task} parameter within "
            f"{engine.config.binary_search_steps} search steps; "
            f"alpha_{task}={alpha} is too small for this data and loss"
        )
    return feasible, feasible_risk


# --------------------------------------------------------------------------
# Public entry points
# --------------------------------------------------------------------------


def _check_precondition(config: CalibrationConfig, n: int) -> None:
    floor = config.alpha_cnf + 1.0 / (n + 1)
    for name, value in (("alpha_loc", config.alpha_loc), ("alpha_cls", config.alpha_cls)):
        if value < floor:
            raise CalibrationPreconditionError(
                f"{name}={value} violates {name} >= alpha_cnf + 1/(n+1) "
                f"= {config.alpha_cnf} + 1/{n + 1} = {floor:.6g}"
            )


def seqcrc_step1(
    samples: Sequence[ImageSample], config: CalibrationConfig
) -> tuple[float, float]:
    """Calibrate the confidence parameters ``(conservative, optimistic)``.

    Both parameters satisfy the corrected combined-risk constraint at level
    ``alpha_cnf``, where the combined risk is the maximum of the confidence
    risk and the monotonized localization/classification risks evaluated at
    their loosest second-step parameters.
    """
    samples = tuple(samples)
    if not samples:
        raise ValueError("empty calibration set")
    config = resolve_config(config, samples)
    engine = _SweepEngine(samples, config)
    plus, minus, _ = _sweep_confidence(engine)
    return plus, minus


def seqcrc_step2(
    samples: Sequence[ImageSample],
    lambda_cnf_minus: float,
    task: str,
    config: CalibrationConfig,
) -> float:
    """Calibrate the second-step parameter for ``task`` ("loc" or "cls")."""
    samples = tuple(samples)
    if not samples:
        raise ValueError("empty calibration set")
    config = resolve_config(config, samples)
    engine = _SweepEngine(samples, config)
    lam, _ = _second_step(engine, lambda_cnf_minus, task)
    return lam


def calibrate(
    samples: Sequence[ImageSample], config: CalibrationConfig
) -> CalibrationResult:
    """Run the full two-step calibration and package the result.

    Deterministic given identical inputs. Raises
    ``CalibrationPreconditionError`` when the error levels cannot carry the
    guarantee, and ``InfeasibleRiskError`` when a second-step search finds no
    feasible parameter.
    """
    samples = tuple(samples)
    n = len(samples)
    if n == 0:
        raise ValueError("empty calibration set")
    config = resolve_config(config, samples)
    _check_precondition(config, n)
    engine = _SweepEngine(samples, config)
    plus, minus, trace = _sweep_confidence(engine)
    lam_loc, loc_risk = _second_step(engine, minus, "loc")
    lam_cls, cls_risk = _second_step(engine, minus, "cls")
    cnf_risk = next((r for lam, r in reversed(trace) if lam >= plus), trace[0][1])
    diagnostics = {
        "cnf_monotonized_risk": cnf_risk,
        "loc_monotonized_risk": loc_risk,
        "cls_monotonized_risk": cls_risk,
        "n_confidence_breakpoints": float(len(engine.visits)),
    }
    return CalibrationResult(
        lambda_cnf_plus=plus,
        lambda_cnf_minus=minus,
        lambda_loc_plus=lam_loc,
        lambda_cls_plus=lam_cls,
        config=config,
        n_calibration=n,
        diagnostics=diagnostics,
    )
