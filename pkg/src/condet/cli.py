"""Command-line interface: calibrate, infer, evaluate, import-coco, validate.

Exit codes partition the failure classes so scripts can tell statistical
infeasibility from data problems:

  0  success
  1  I/O, parse or schema error
  2  error levels violate the guarantee precondition
  3  no feasible second-step parameter (alpha too small for the data)
  4  result/config digest mismatch
  5  validation found a mean risk above its target plus slack

Every error prints one machine-parsable line to stderr. Log verbosity is
controlled by the CONDET_LOG environment variable (debug/info/warning).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from . import __version__
from .calibration import (
    CalibrationConfig,
    CalibrationPreconditionError,
    InfeasibleRiskError,
    calibrate,
)
from .dataio import (
    DataFormatError,
    DigestMismatchError,
    config_digest,
    config_from_dict,
    config_to_dict,
    import_coco,
    load_dataset,
    load_result,
    save_result,
    write_dataset_file,
)
from .inference_metrics import evaluate, infer
from .synth import (
    SynthSpec,
    format_report_table,
    monte_carlo_validate,
    report_to_dict,
)

EXIT_OK = 0
EXIT_DATA = 1
EXIT_PRECONDITION = 2
EXIT_INFEASIBLE = 3
EXIT_DIGEST = 4
EXIT_GUARANTEE = 5

log = logging.getLogger("condet")


def _setup_logging() -> None:
    level = os.environ.get("CONDET_LOG", "warning").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s",
    )


def _fail(code: int, kind: str, exc: BaseException) -> int:
    print(f'error code={code} kind={kind} detail="{exc}"', file=sys.stderr)
    return code


def _read_json(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


_CONFIG_FLAG_MAP = {
    "alpha_cnf": "alpha_cnf",
    "alpha_loc": "alpha_loc",
    "alpha_cls": "alpha_cls",
    "binary_search_steps": "binary_search_steps",
    "prefilter": "prefilter_threshold",
}


def _build_config(args: argparse.Namespace, raw: dict | None = None) -> CalibrationConfig:
    """Merge config-file values with command-line overrides (flags win)."""
    if raw is None:
        raw = {}
        if getattr(args, "config", None):
            raw = _read_json(args.config)
            raw = raw.get("calibration", raw)
    raw = dict(raw)
    raw.setdefault("alpha_cnf", 0.02)
    raw.setdefault("alpha_loc", 0.05)
    raw.setdefault("alpha_cls", 0.05)
    for flag, key in _CONFIG_FLAG_MAP.items():
        value = getattr(args, flag, None)
        if value is not None:
            raw[key] = value
    loss = raw.setdefault("loss_spec", {})
    if getattr(args, "loss_confidence", None):
        loss["confidence_kind"] = args.loss_confidence
    if getattr(args, "loss_localization", None):
        loss["localization_kind"] = args.loss_localization
    if getattr(args, "loss_localization_tau", None) is not None:
        loss["localization_tau"] = args.loss_localization_tau
    if getattr(args, "loss_classification_aggregation", None):
        loss["classification_aggregation"] = args.loss_classification_aggregation
    predset = raw.setdefault("predset_spec", {})
    if getattr(args, "predset_localization", None):
        predset["localization_kind"] = args.predset_localization
    if getattr(args, "predset_classification", None):
        predset["classification_kind"] = args.predset_classification
    match = raw.setdefault("match_spec", {"kind": "hausdorff"})
    if getattr(args, "match", None):
        match["kind"] = args.match
    if getattr(args, "tau", None) is not None:
        match["tau"] = args.tau
    if getattr(args, "lambda_loc_min", None) is not None or getattr(args, "lambda_loc_max", None) is not None:
        lo = args.lambda_loc_min if args.lambda_loc_min is not None else 0.0
        hi = args.lambda_loc_max
        if hi is None:
            raise DataFormatError("--lambda-loc-max is required when --lambda-loc-min is given")
        raw["lambda_loc_bounds"] = [lo, hi]
    if getattr(args, "no_finite_sample_correction", False):
        raw["finite_sample_correction"] = False
    return config_from_dict(raw)


def _print_aligned(rows: list[tuple[str, str]]) -> None:
    width = max(len(name) for name, _ in rows)
    for name, value in rows:
        print(f"{name:<{width}}  {value}")


def cmd_calibrate(args: argparse.Namespace) -> int:
    config = _build_config(args)
    samples = load_dataset(args.dataset, config.prefilter_threshold)
    result = calibrate(samples, config)
    save_result(result, args.out)
    _print_aligned(
        [
            ("lambda_cnf_plus", f"{result.lambda_cnf_plus:.10g}"),
            ("lambda_cnf_minus", f"{result.lambda_cnf_minus:.10g}"),
            ("lambda_loc_plus", f"{result.lambda_loc_plus:.10g}"),
            ("lambda_cls_plus", f"{result.lambda_cls_plus:.10g}"),
            ("n_calibration", str(result.n_calibration)),
        ]
        + [(k, f"{v:.6g}") for k, v in result.diagnostics.items()]
    )
    log.info("wrote calibration result to %s", args.out)
    return EXIT_OK


def cmd_infer(args: argparse.Namespace) -> int:
    result = load_result(args.result)
    if getattr(args, "config", None):
        supplied = _build_config(args)
        if config_digest(supplied) != config_digest(result.config) and not args.allow_config_mismatch:
            raise DigestMismatchError(
                "supplied configuration differs from the one the result was "
                "calibrated with; pass --allow-config-mismatch to proceed"
            )
    samples = load_dataset(args.dataset, result.config.prefilter_threshold)
    predictions = []
    for sample in samples:
        pred = infer(sample.detections, result, image_id=sample.image_id)
        predictions.append(
            {
                "image_id": pred.image_id,
                "selected": [
                    {
                        "index": sel.index,
                        "box": list(sel.box.as_tuple()),
                        "margined_box": list(sel.margined_box.as_tuple()),
                        "class_set": sorted(sel.class_labels),
                    }
                    for sel in pred.selected
                ],
            }
        )
    payload = {
        "schema_version": 1,
        "config": config_to_dict(result.config),
        "lambda_cnf_plus": result.lambda_cnf_plus,
        "lambda_loc_plus": result.lambda_loc_plus,
        "lambda_cls_plus": result.lambda_cls_plus,
        "predictions": predictions,
    }
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")
    print(f"wrote {len(predictions)} per-image predictions to {args.out}")
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace) -> int:
    result = load_result(args.result)
    samples = load_dataset(args.dataset, result.config.prefilter_threshold)
    report = evaluate(samples, result)
    _print_aligned(
        [
            ("n_test", str(report.n_test)),
            ("cnf_risk", f"{report.cnf_risk:.5f} (target {result.config.alpha_cnf})"),
            ("loc_risk", f"{report.loc_risk:.5f} (target {result.config.alpha_loc})"),
            ("cls_risk", f"{report.cls_risk:.5f} (target {result.config.alpha_cls})"),
            (
                "global_risk",
                f"{report.global_risk:.5f} (target "
                f"{result.config.alpha_loc + result.config.alpha_cls})",
            ),
            ("cnf_set_size", f"{report.cnf_set_size:.4f}"),
            ("loc_set_size", f"{report.loc_set_size:.4f}"),
            ("cls_set_size", f"{report.cls_set_size:.4f}"),
            ("images_without_selection", str(report.n_images_without_selection)),
            ("zero_area_boxes_skipped", str(report.n_zero_area_boxes_skipped)),
        ]
    )
    if args.out:
        payload = {
            "schema_version": 1,
            "config": config_to_dict(result.config),
            "report": {
                "cnf_risk": report.cnf_risk,
                "loc_risk": report.loc_risk,
                "cls_risk": report.cls_risk,
                "global_risk": report.global_risk,
                "cnf_set_size": report.cnf_set_size,
                "loc_set_size": report.loc_set_size,
                "cls_set_size": report.cls_set_size,
                "n_test": report.n_test,
                "n_images_without_selection": report.n_images_without_selection,
                "n_zero_area_boxes_skipped": report.n_zero_area_boxes_skipped,
            },
        }
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2)
            fh.write("\n")
    return EXIT_OK


def cmd_import_coco(args: argparse.Namespace) -> int:
    dataset = import_coco(args.gt, args.detections)
    write_dataset_file(dataset, args.out)
    print(
        f"imported {len(dataset.images)} images, {dataset.num_classes} classes "
        f"-> {args.out}"
    )
    return EXIT_OK


def cmd_validate(args: argparse.Namespace) -> int:
    raw = _read_json(args.spec) if args.spec else {}
    synth_raw = dict(raw.get("synth", {}))
    if args.seed is not None:
        synth_raw["seed"] = args.seed
    spec = SynthSpec(**synth_raw)
    config = _build_config(args, raw.get("calibration"))
    trials = args.trials if args.trials is not None else int(raw.get("trials", 20))
    n_cal = args.n_cal if args.n_cal is not None else int(raw.get("n_cal", 200))
    n_test = args.n_test if args.n_test is not None else int(raw.get("n_test", 200))
    slack = args.slack if args.slack is not None else float(raw.get("slack", 0.01))
    report = monte_carlo_validate(spec, config, trials=trials, n_cal=n_cal, n_test=n_test)
    print(format_report_table(report))
    if args.out:
        payload = {
            "schema_version": 1,
            "config": config_to_dict(config),
            "synth": synth_raw,
            "slack": slack,
            "report": report_to_dict(report),
        }
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2)
            fh.write("\n")
    violations = [
        name
        for name, summary in (
            ("confidence", report.cnf),
            ("localization", report.loc),
            ("classification", report.cls),
            ("global", report.global_),
        )
        if summary.mean_risk > summary.alpha + slack
    ]
    if violations:
        print(
            f'error code={EXIT_GUARANTEE} kind=guarantee detail="mean risk above '
            f'target+slack for: {", ".join(violations)}"',
            file=sys.stderr,
        )
        return EXIT_GUARANTEE
    return EXIT_OK


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file (flags override its values)")
    parser.add_argument("--alpha-cnf", dest="alpha_cnf", type=float)
    parser.add_argument("--alpha-loc", dest="alpha_loc", type=float)
    parser.add_argument("--alpha-cls", dest="alpha_cls", type=float)
    parser.add_argument(
        "--loss-confidence",
        choices=("box_count_threshold", "box_count_recall"),
        dest="loss_confidence",
    )
    parser.add_argument(
        "--loss-localization",
        choices=("thresholded", "boxwise", "pixelwise"),
        dest="loss_localization",
    )
    parser.add_argument("--loss-localization-tau", dest="loss_localization_tau", type=float)
    parser.add_argument(
        "--loss-classification-aggregation",
        choices=("average", "max", "thresholded"),
        dest="loss_classification_aggregation",
    )
    parser.add_argument(
        "--predset-localization",
        choices=("additive", "multiplicative"),
        dest="predset_localization",
    )
    parser.add_argument(
        "--predset-classification", choices=("lac", "aps"), dest="predset_classification"
    )
    parser.add_argument("--match", choices=("hausdorff", "lac", "giou", "mix"))
    parser.add_argument("--tau", type=float, help="mixing weight for the mix matching distance")
    parser.add_argument("--prefilter", type=float, help="confidence floor applied at ingestion")
    parser.add_argument("--binary-search-steps", dest="binary_search_steps", type=int)
    parser.add_argument("--lambda-loc-min", dest="lambda_loc_min", type=float)
    parser.add_argument("--lambda-loc-max", dest="lambda_loc_max", type=float)
    parser.add_argument(
        "--no-finite-sample-correction",
        action="store_true",
        help=argparse.SUPPRESS,
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="condet",
        description="Risk-controlled conformal post-processing for object detections.",
    )
    parser.add_argument("--version", action="version", version=f"condet {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("calibrate", help="tune the threshold and correction parameters")
    p.add_argument("--dataset", required=True, help="native dataset JSON (calibration split)")
    p.add_argument("--out", required=True, help="output path for the calibration result")
    _add_config_flags(p)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("infer", help="apply a calibration result to new images")
    p.add_argument("--result", required=True, help="calibration result file")
    p.add_argument("--dataset", required=True, help="native dataset JSON to post-process")
    p.add_argument("--out", required=True, help="output path for per-image predictions")
    p.add_argument(
        "--allow-config-mismatch",
        action="store_true",
        help="proceed even when --config does not match the result's digest",
    )
    _add_config_flags(p)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("evaluate", help="measure risks and set sizes on held-out data")
    p.add_argument("--result", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", help="optional JSON report path")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("import-coco", help="convert COCO annotations + results to the native schema")
    p.add_argument("--gt", required=True, help="COCO annotation file")
    p.add_argument("--detections", required=True, help="COCO detection-results file")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_import_coco)

    p = sub.add_parser("validate", help="Monte Carlo check of the risk guarantee on synthetic data")
    p.add_argument("--spec", help="JSON file with synth/calibration/trial settings")
    p.add_argument("--trials", type=int)
    p.add_argument("--n-cal", dest="n_cal", type=int)
    p.add_argument("--n-test", dest="n_test", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--slack", type=float, help="tolerance added to each target (default 0.01)")
    p.add_argument("--out", help="optional JSON report path")
    _add_config_flags(p)
    p.set_defaults(func=cmd_validate)

    return parser


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CalibrationPreconditionError as exc:
        return _fail(EXIT_PRECONDITION, "precondition", exc)
    except InfeasibleRiskError as exc:
        return _fail(EXIT_INFEASIBLE, "infeasible", exc)
    except DigestMismatchError as exc:
        return _fail(EXIT_DIGEST, "digest-mismatch", exc)
    except (DataFormatError, OSError, json.JSONDecodeError, ValueError, KeyError, TypeError) as exc:
        return _fail(EXIT_DATA, "data", exc)


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
