"""Command-line entry point.

Exit codes: 0 success, 1 configuration error, 2 input/output error,
3 backend (model execution) error.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from .cascade import format_verdict_line, run_pipeline
from .config import PRESET_NAMES, AppConfig, KvConfig, compose_config, load_preset
from .core import (
    ClassRegistry,
    DatasetManifest,
    Image,
    ManifestRecord,
    Split,
    load_image,
    load_manifest,
    save_manifest,
)
from .datagen import (
    ReviewStatus,
    apply_review,
    generate_dataset2,
    generate_synthetic_corpus,
    load_crop_records,
    save_crop_records,
)
from .errors import (
    BackendError,
    ConfigError,
    EvaluationError,
    InvalidInputError,
    ParseError,
    ToolkitError,
)
from .evaluation import emit_results_table, evaluate, write_verdicts
from .svm import SvmBaselineModel, load_feature_file, load_model, save_model


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="config file of `key = value` lines")
    common.add_argument("--preset", help="packaged preset name (model1..model6)")
    common.add_argument("--manifest", help="dataset manifest path")
    common.add_argument("--registry", help="class registry path")
    common.add_argument("--out", help="output directory or file")
    common.add_argument("--jobs", type=int, help="parallel worker count")
    mode = common.add_mutually_exclusive_group()
    mode.add_argument("--strict", action="store_true", help="input failures are fatal")
    mode.add_argument("--lenient", action="store_true", help="collect input failures and continue")

    parser = argparse.ArgumentParser(
        prog="cropcascade",
        description="Two-stage detect-then-classify pipelines and the SVM baseline.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("classify", parents=[common], help="classify one image")
    p.add_argument("image", help="image file to classify")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser(
        "datagen", parents=[common], help="write detector crops for review"
    )
    p.add_argument("--floor", type=float, help="detection score floor (default 0.05)")
    p.set_defaults(func=cmd_datagen)

    p = sub.add_parser(
        "review-apply", parents=[common], help="fold a review list into a crop manifest"
    )
    p.add_argument("--records", required=True, help="crop records file from datagen")
    p.add_argument("--review", required=True, help="review file: crop path TAB accept|reject")
    p.set_defaults(func=cmd_review_apply)

    p = sub.add_parser("synth", parents=[common], help="generate the synthetic corpus")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser(
        "evaluate", parents=[common], help="run pipelines over splits and print the table"
    )
    p.add_argument(
        "--models",
        required=True,
        help="comma list of preset names or config files, one table row each",
    )
    p.add_argument("--split", help="comma list of splits (default: all in the manifest)")
    p.set_defaults(func=cmd_evaluate)

    svm = sub.add_parser("svm", help="feature-vector baseline").add_subparsers(
        dest="svm_command", required=True
    )
    p = svm.add_parser("train", parents=[common], help="fit PCA+SVM on a feature file")
    p.add_argument("--features", required=True, help="feature table: class TAB v1,v2,...")
    p.set_defaults(func=cmd_svm_train)
    p = svm.add_parser("predict", parents=[common], help="predict with a trained model")
    p.add_argument("--model", required=True, help="model file from `svm train`")
    p.add_argument("--features", required=True, help="feature table to predict on")
    p.set_defaults(func=cmd_svm_predict)

    backends = sub.add_parser("backends", help="backend utilities").add_subparsers(
        dest="backends_command", required=True
    )
    p = backends.add_parser("check", parents=[common], help="construct and probe backends")
    p.set_defaults(func=cmd_backends_check)

    return parser


def _app_config(args: argparse.Namespace) -> AppConfig:
    overrides: dict[str, str] = {}
    for flag, key in (
        ("manifest", "manifest"),
        ("registry", "registry"),
        ("out", "out"),
    ):
        value = getattr(args, flag, None)
        if value:
            overrides[key] = value
    if getattr(args, "jobs", None) is not None:
        overrides["jobs"] = str(args.jobs)
    if getattr(args, "strict", False):
        overrides["strict"] = "true"
    if getattr(args, "lenient", False):
        overrides["strict"] = "false"
    if getattr(args, "floor", None) is not None:
        overrides["floor_threshold"] = repr(args.floor)
    kv = compose_config(args.preset, args.config, overrides)
    return AppConfig.from_kv(kv)


def _require(value, what: str):
    if not value:
        raise ConfigError(f"{what} is required (flag or config key)")
    return value


def cmd_classify(args: argparse.Namespace) -> int:
    cfg = _app_config(args)
    registry = cfg.load_registry()
    pipeline = cfg.build_pipeline(registry)
    image = load_image(args.image)
    verdict = run_pipeline(image, pipeline)
    print(format_verdict_line(args.image, verdict))
    return 0


def cmd_datagen(args: argparse.Namespace) -> int:
    cfg = _app_config(args)
    registry = cfg.load_registry()
    manifest_path = _require(cfg.manifest_path, "a manifest")
    out_dir = Path(_require(cfg.out_dir, "an output directory"))
    manifest = load_manifest(manifest_path, registry)
    result = generate_dataset2(
        manifest,
        cfg.build_detector(),
        cfg.floor_threshold,
        out_dir,
        base_dir=Path(manifest_path).parent,
        class_filter=cfg.class_filter,
        crop_size=cfg.crop_size,
    )
    save_crop_records(out_dir / "records.tsv", result.records)
    crop_manifest = DatasetManifest(
        tuple(
            ManifestRecord(r.crop_path, r.class_name, r.split)
            for r in result.records
            if r.status is not ReviewStatus.REJECTED
        )
    )
    save_manifest(crop_manifest, out_dir / "crops_manifest.tsv")
    print(
        f"{len(manifest.records)} images, {len(result.records)} crops, "
        f"{len(result.errors)} errors"
    )
    for path, message in result.errors:
        print(f"error: {path}: {message}", file=sys.stderr)
    if result.errors and cfg.strict:
        return 2
    return 0


def cmd_review_apply(args: argparse.Namespace) -> int:
    cfg = _app_config(args)
    out_path = Path(_require(cfg.out_dir, "an output manifest path"))
    records = load_crop_records(args.records)
    manifest, rejected = apply_review(records, args.review)
    if out_path.is_dir():
        out_path = out_path / "accepted_manifest.tsv"
    save_manifest(manifest, out_path)
    save_crop_records(args.records, records)
    print(f"{len(manifest.records)} accepted, {rejected} rejected")
    return 0


def cmd_synth(args: argparse.Namespace) -> int:
    cfg = _app_config(args)
    out_dir = Path(_require(cfg.out_dir, "an output directory"))
    counts = {s: n for s, n in cfg.synth_counts.items() if n > 0}
    if not counts:
        raise ConfigError("no images requested; set synth.<split> counts")
    manifest, truth = generate_synthetic_corpus(cfg.synth, counts, out_dir)
    summary = ", ".join(f"{s.value}={len(manifest.for_split(s))}" for s in counts)
    print(f"wrote {len(manifest.records)} images ({summary})")
    return 0


def _model_kv(token: str) -> KvConfig:
    if token in PRESET_NAMES:
        return load_preset(token)
    if Path(token).is_file():
        return KvConfig.load(token)
    raise ConfigError(f"unknown model {token!r}: not a preset name or config file")


def cmd_evaluate(args: argparse.Namespace) -> int:
    base = _app_config(args)
    registry = base.load_registry()
    manifest_path = _require(base.manifest_path, "a manifest")
    manifest = load_manifest(manifest_path, registry)
    if args.split:
        try:
            requested = tuple(Split.parse(s.strip()) for s in args.split.split(","))
        except InvalidInputError as exc:
            raise ConfigError(str(exc))
    else:
        requested = manifest.splits()

    overrides = {"manifest": manifest_path}
    if base.registry_path:
        overrides["registry"] = base.registry_path
    reports: dict[str, dict] = {}
    for token in (t.strip() for t in args.models.split(",")):
        merged = compose_config(args.preset, args.config, overrides).merged(_model_kv(token))
        cfg = AppConfig.from_kv(merged)
        pipeline = cfg.build_pipeline(registry)
        name = Path(token).stem if token not in PRESET_NAMES else token
        reports[name] = {}
        for split in requested:
            if not manifest.for_split(split):
                continue
            report = evaluate(
                lambda image: run_pipeline(image, pipeline),
                manifest,
                split,
                registry,
                manifest_path=manifest_path,
                strict=base.strict,
                jobs=base.jobs,
            )
            reports[name][split] = report
            if base.out_dir:
                write_verdicts(
                    Path(base.out_dir) / f"verdicts_{name}_{split.value}.tsv", report
                )
    print(emit_results_table(reports), end="")
    return 0


def cmd_svm_train(args: argparse.Namespace) -> int:
    cfg = _app_config(args)
    registry = (
        ClassRegistry.load(cfg.registry_path) if cfg.registry_path else None
    )
    if registry is None:
        raise ConfigError("svm train needs a class registry (--registry)")
    out_path = Path(_require(cfg.out_dir, "an output model path"))
    X, y = load_feature_file(args.features, registry)
    start = time.perf_counter()
    model = SvmBaselineModel.train(
        X,
        y,
        registry,
        C=cfg.svm_c,
        variance_fraction=cfg.pca_variance_fraction if cfg.pca_enabled else None,
        gamma=cfg.svm_gamma,
        tol=cfg.svm_tol,
    )
    wall = time.perf_counter() - start
    if out_path.is_dir():
        out_path = out_path / "svm_model.bin"
    save_model(out_path, model)
    for name, est in zip(model.class_names, model.svm.estimators_):
        print(f"class {name}: {len(est.support_)} support vectors")
    if model.pca is not None:
        print(f"pca components: {model.pca.n_components_}")
    accuracy = float(np.mean(model.predict(X) == y))
    print(f"train accuracy {accuracy * 100:.2f}%")
    print(f"wall time {wall:.2f}s")
    return 0


def cmd_svm_predict(args: argparse.Namespace) -> int:
    cfg = _app_config(args)
    model = load_model(args.model)
    registry = ClassRegistry(model.class_names)
    X, y = load_feature_file(args.features, registry)
    predicted = model.predict_names(X)
    true_names = [registry.name_of(int(c)) for c in y]
    if cfg.out_dir:
        out_path = Path(cfg.out_dir)
        if out_path.is_dir():
            out_path = out_path / "predictions.tsv"
        lines = [f"{p}\t{t}" for p, t in zip(predicted, true_names)]
        out_path.parent.mkdir(parents=True, exist_ok=True)
        out_path.write_text("".join(ln + "\n" for ln in lines), encoding="utf-8")
    accuracy = float(np.mean([p == t for p, t in zip(predicted, true_names)]))
    print(f"accuracy {accuracy * 100:.2f}%")
    return 0


def cmd_backends_check(args: argparse.Namespace) -> int:
    cfg = _app_config(args)
    registry = cfg.load_registry()
    detector = cfg.build_detector()
    print(f"detector: {cfg.detector.kind} ok (vocabulary: {', '.join(detector.vocabulary)})")
    classifier = cfg.build_classifier(registry)
    print(f"classifier: {cfg.classifier.kind} ok ({classifier.num_classes} classes)")
    if cfg.fallback != cfg.classifier:
        fallback = cfg.build_classifier(registry, cfg.fallback)
        print(f"fallback: {cfg.fallback.kind} ok ({fallback.num_classes} classes)")
    if cfg.detector.kind == "synthetic":
        probe = Image.filled(16, 16, (128, 128, 128))
        detector.detect(probe)
        print("probe: detector ran on a 16x16 gray frame")
    return 0


def run(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ParseError, EvaluationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except BackendError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except InvalidInputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ToolkitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
