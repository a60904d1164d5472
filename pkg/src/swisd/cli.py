"""Command-line entry point: one binary, nine pipeline stages.

Every stage writes its artifacts under ``--out``: the fully resolved config
(``config.resolved``), run metadata (``run.json``), and stage outputs in
``checkpoints/``, ``metrics/``, ``analysis/``, or ``results.json``.  Exit
codes: 0 success, 1 config or input violation, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import os
import re
import sys
import time
from pathlib import Path

from .analysis import analyze_images
from .config import (
    ConfigError,
    ExperimentConfig,
    resolve_config,
    write_resolved_config,
)
from .manifest import (
    DatasetManifest,
    ManifestError,
    SampleRecord,
    SplitError,
    make_fragnet_splits,
    parse_manifest,
    validate_dataset,
    write_manifest,
)
from .pretrain import PretrainError, run_pretraining
from .probe import (
    ProbeError,
    evaluate_page_level,
    evaluate_word_level,
    finetune_semi_supervised,
    load_classifier_checkpoint,
    save_classifier_checkpoint,
    train_linear_probe,
)
from .synthetic import generate_dataset

_IMAGE_EXTS = (".png", ".jpg", ".jpeg", ".tif", ".tiff", ".bmp")
_MODE_ALIASES = {"intra": "intra_script", "cross": "cross_script"}


def _versions() -> dict:
    import cv2
    import numpy
    import scipy
    import torch
    import torchvision

    from . import __version__

    return {
        "python": sys.version.split()[0],
        "swisd": __version__,
        "numpy": numpy.__version__,
        "scipy": scipy.__version__,
        "torch": torch.__version__,
        "torchvision": torchvision.__version__,
        "opencv": cv2.__version__,
    }


def _write_run_metadata(out_dir: Path, command: str, argv: list[str], seed: int, started: float) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = {
        "command": command,
        "argv": argv,
        "seed": seed,
        "versions": _versions(),
        "started_unix": started,
        "duration_s": round(time.time() - started, 3),
    }
    with (out_dir / "run.json").open("w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)


def _write_results(out_dir: Path, results: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    with (out_dir / "results.json").open("w", encoding="utf-8") as fh:
        json.dump(results, fh, indent=2)


def _config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    return resolve_config(args.config, args.set or [], args.seed)


def _load_manifest(args: argparse.Namespace, config: ExperimentConfig) -> DatasetManifest:
    path = args.manifest or config.data.manifest
    if not path:
        raise ConfigError("no manifest given (flag --manifest or config data.manifest)")
    name = getattr(args, "dataset", None) or config.data.dataset or "custom"
    return parse_manifest(path, dataset_name=name)


def _scan_tree(root: Path, layout: str, pattern: str | None, exts: tuple[str, ...]) -> list[SampleRecord]:
    """Walk an image tree and derive (writer, page, text) per the chosen layout."""
    compiled = re.compile(pattern) if pattern else None
    records = []
    paths = sorted(
        p for p in root.rglob("*") if p.is_file() and p.suffix.lower() in exts
    )
    for path in paths:
        rel = path.relative_to(root).as_posix()
        if layout == "dirs":
            parts = Path(rel).parts
            if len(parts) < 3:
                raise ManifestError(
                    f"{rel}: dirs layout expects <writer>/<page>/<image>; "
                    "use --layout regex for other trees"
                )
            writer, page = parts[0], parts[1]
            text = int(page) if page.isdigit() else 0
        else:
            m = compiled.search(rel)
            if not m:
                continue
            groups = m.groupdict()
            if "writer" not in groups or not groups["writer"]:
                raise ManifestError(f"{rel}: pattern matched without a 'writer' group")
            writer = groups["writer"]
            page = groups.get("page") or "0"
            text_raw = groups.get("text")
            text = int(text_raw) if text_raw and text_raw.isdigit() else (
                int(page) if page.isdigit() else 0
            )
        records.append(SampleRecord(rel, writer, page, text_index=text))
    return records


def _cmd_make_manifest(args: argparse.Namespace, argv: list[str]) -> int:
    config = _config_from_args(args)
    if args.synthetic:
        manifest_path = generate_dataset(
            args.root,
            num_writers=args.writers,
            pages_per_writer=args.pages,
            words_per_page=args.words,
            seed=config.seed,
            dataset_name=args.dataset or "custom",
        )
        print(f"synthetic dataset with manifest {manifest_path}")
        return 0
    root = Path(args.root)
    if not root.is_dir():
        raise ManifestError(f"root directory {root} does not exist")
    if args.layout == "regex" and not args.pattern:
        raise ConfigError("--layout regex requires --pattern")
    exts = tuple(
        e if e.startswith(".") else "." + e for e in (args.ext or ",".join(_IMAGE_EXTS)).lower().split(",")
    )
    records = _scan_tree(root, args.layout, args.pattern, exts)
    if not records:
        raise ManifestError(f"no images found under {root} (extensions {', '.join(exts)})")
    out_path = Path(args.out_manifest or root / "manifest.tsv")
    manifest = DatasetManifest(args.dataset or "custom", records, base_dir=root)
    write_manifest(manifest, out_path)
    print(f"wrote {len(records)} records, {manifest.num_writers} writers -> {out_path}")
    return 0


def _cmd_split(args: argparse.Namespace, argv: list[str]) -> int:
    config = _config_from_args(args)
    manifest = _load_manifest(args, config)
    split = make_fragnet_splits(
        manifest, config.seed, iam_single_page_test_fraction=config.data.iam_test_fraction
    )
    out_path = Path(args.out_manifest or args.manifest or config.data.manifest)
    write_manifest(split, out_path)
    n_train = len(split.subset("train"))
    n_test = len(split.subset("test"))
    print(f"{split.dataset_name}: {n_train} train / {n_test} test -> {out_path}")
    return 0


def _cmd_validate(args: argparse.Namespace, argv: list[str]) -> int:
    config = _config_from_args(args)
    manifest = _load_manifest(args, config)
    report = validate_dataset(manifest, check_readable=not args.no_check_readable)
    print(json.dumps(report.as_dict(), indent=2))
    return 0


def _cmd_pretrain(args: argparse.Namespace, argv: list[str]) -> int:
    started = time.time()
    config = _config_from_args(args)
    manifest = _load_manifest(args, config)
    out_dir = Path(args.out)
    write_resolved_config(config, out_dir)
    result = run_pretraining(
        manifest,
        config.pretrain_config(),
        config.encoder,
        out_dir,
        seed=config.seed,
        augment=config.preprocess.augment_params(),
        device=args.device,
    )
    last = result.history[-1] if result.history else {}
    _write_results(
        out_dir,
        {
            "stage": "pretrain",
            "dataset": manifest.dataset_name,
            "epochs": config.pretrain.epochs,
            "final_loss": last.get("loss"),
            "final_offdiag_mean_abs": last.get("offdiag_mean_abs"),
            "final_variance_erank": last.get("variance_erank"),
            "skipped_batches": result.skipped_batches,
            "checkpoint": str(result.checkpoint_path),
        },
    )
    _write_run_metadata(out_dir, "pretrain", argv, config.seed, started)
    print(f"pretrained {config.pretrain.epochs} epochs -> {result.checkpoint_path}")
    return 0


def _cmd_probe(args: argparse.Namespace, argv: list[str]) -> int:
    started = time.time()
    config = _config_from_args(args)
    manifest = _load_manifest(args, config)
    out_dir = Path(args.out)
    write_resolved_config(config, out_dir)
    classifier, history = train_linear_probe(
        args.checkpoint,
        manifest,
        config.probe_config(),
        seed=config.seed,
        device=args.device,
    )
    ckpt_dir = out_dir / "checkpoints"
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    classifier_path = save_classifier_checkpoint(
        ckpt_dir / "classifier.pt",
        classifier,
        metadata={"seed": config.seed, "dataset": manifest.dataset_name},
    )
    metrics_dir = out_dir / "metrics"
    metrics_dir.mkdir(parents=True, exist_ok=True)
    with (metrics_dir / "probe_history.jsonl").open("w", encoding="utf-8") as fh:
        for row in history:
            fh.write(json.dumps(row) + "\n")
    _write_results(
        out_dir,
        {
            "stage": "probe",
            "dataset": manifest.dataset_name,
            "mode": config.downstream.finetune_mode,
            "num_classes": len(classifier.classes),
            "final_train_accuracy": history[-1]["train_accuracy"] if history else None,
            "classifier": str(classifier_path),
        },
    )
    _write_run_metadata(out_dir, "probe", argv, config.seed, started)
    print(f"trained {len(classifier.classes)}-writer classifier -> {classifier_path}")
    return 0


def _cmd_eval_word(args: argparse.Namespace, argv: list[str]) -> int:
    started = time.time()
    config = _config_from_args(args)
    manifest = _load_manifest(args, config)
    classifier, _ = load_classifier_checkpoint(args.classifier)
    report = evaluate_word_level(
        classifier, manifest, batch_size=config.downstream.eval_batch_size, device=args.device
    )
    out_dir = Path(args.out)
    results = {"stage": "eval-word", "dataset": manifest.dataset_name, **report.as_dict()}
    _write_results(out_dir, results)
    _write_run_metadata(out_dir, "eval-word", argv, config.seed, started)
    print(f"word-level accuracy {report.accuracy:.2f}% over {report.n_words} words")
    return 0


def _cmd_eval_page(args: argparse.Namespace, argv: list[str]) -> int:
    started = time.time()
    config = _config_from_args(args)
    manifest = _load_manifest(args, config)
    classifier, _ = load_classifier_checkpoint(args.classifier)
    report = evaluate_page_level(
        classifier, manifest, batch_size=config.downstream.eval_batch_size, device=args.device
    )
    out_dir = Path(args.out)
    results = {"stage": "eval-page", "dataset": manifest.dataset_name, **report.as_dict()}
    _write_results(out_dir, results)
    _write_run_metadata(out_dir, "eval-page", argv, config.seed, started)
    print(
        f"page-level accuracy {report.accuracy:.2f}% over {report.n_pages} pages "
        f"({len(report.excluded_pages)} excluded)"
    )
    return 0


def _cmd_finetune(args: argparse.Namespace, argv: list[str]) -> int:
    started = time.time()
    config = _config_from_args(args)
    manifest = _load_manifest(args, config)
    out_dir = Path(args.out)
    write_resolved_config(config, out_dir)
    mode = _MODE_ALIASES.get(args.mode, args.mode) if args.mode else config.downstream.mode
    fraction = args.fraction if args.fraction is not None else config.downstream.fraction
    result = finetune_semi_supervised(
        args.checkpoint,
        manifest,
        config.probe_config(),
        fraction=fraction,
        mode=mode,
        seed=config.seed,
        device=args.device,
    )
    ckpt_dir = out_dir / "checkpoints"
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    classifier_path = save_classifier_checkpoint(
        ckpt_dir / "classifier.pt",
        result.classifier,
        metadata={"seed": config.seed, "fraction": fraction, "mode": mode},
    )
    _write_results(
        out_dir,
        {
            "stage": "finetune",
            "dataset": manifest.dataset_name,
            "mode": mode,
            "fraction": fraction,
            "n_labeled": result.n_labeled,
            "classifier": str(classifier_path),
            **result.page_report.as_dict(),
        },
    )
    _write_run_metadata(out_dir, "finetune", argv, config.seed, started)
    print(
        f"fine-tuned on {result.n_labeled} labeled words ({mode}); "
        f"page-level accuracy {result.page_report.accuracy:.2f}%"
    )
    return 0


def _cmd_analyze(args: argparse.Namespace, argv: list[str]) -> int:
    started = time.time()
    config = _config_from_args(args)
    manifest = parse_manifest(args.images, dataset_name=config.data.dataset or "custom")
    out_dir = Path(args.out)
    write_resolved_config(config, out_dir)
    rho0 = args.rho0 if args.rho0 is not None else config.analysis.rho0
    summary = analyze_images(
        args.checkpoint,
        manifest,
        out_dir / "analysis",
        rho0=rho0,
        alpha=config.analysis.alpha,
        max_images=args.max_images or config.analysis.max_images,
    )
    _write_run_metadata(out_dir, "analyze", argv, config.seed, started)
    mean = summary["mean_test"]
    print(
        f"analyzed {summary['n_tested']}/{summary['n_images']} images; "
        f"mean-test rejections {mean['rejected_raw']} raw, "
        f"{mean['rejected_bonferroni']} after correction"
    )
    return 0


def _add_common(parser: argparse.ArgumentParser, default_out: str) -> None:
    parser.add_argument("--config", help="YAML config file")
    parser.add_argument(
        "--set",
        action="append",
        metavar="KEY=VALUE",
        help="override a config value, e.g. --set pretrain.epochs=2",
    )
    parser.add_argument("--seed", type=int, help="root seed (overrides config)")
    parser.add_argument("--device", default="cpu", help="torch device (default cpu)")
    parser.add_argument("--out", default=default_out, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="swisd",
        description="Decorrelation-pretrained writer identification pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-manifest", help="build a manifest from an image tree")
    _add_common(p, "runs/make-manifest")
    p.add_argument("--root", required=True, help="image tree root (or synthetic output dir)")
    p.add_argument("--dataset", help="dataset name (IAM, CVL, Firemaker, custom)")
    p.add_argument("--layout", choices=("dirs", "regex"), default="dirs")
    p.add_argument("--pattern", help="regex with named groups writer/page/text (regex layout)")
    p.add_argument("--ext", help="comma-separated image extensions")
    p.add_argument("--out-manifest", help="manifest path (default <root>/manifest.tsv)")
    p.add_argument("--synthetic", action="store_true", help="render a synthetic corpus instead")
    p.add_argument("--writers", type=int, default=5)
    p.add_argument("--pages", type=int, default=4)
    p.add_argument("--words", type=int, default=25)
    p.set_defaults(func=_cmd_make_manifest)

    p = sub.add_parser("split", help="materialize train/test split rules")
    _add_common(p, "runs/split")
    p.add_argument("--manifest", help="input manifest")
    p.add_argument("--dataset", help="dataset name controlling the split rule")
    p.add_argument("--out-manifest", help="output manifest (default: input, in place)")
    p.set_defaults(func=_cmd_split)

    p = sub.add_parser("validate", help="check files, readability, writer coverage")
    _add_common(p, "runs/validate")
    p.add_argument("--manifest", help="manifest to validate")
    p.add_argument("--dataset", help="dataset name")
    p.add_argument("--no-check-readable", action="store_true", help="skip image decoding")
    p.set_defaults(func=_cmd_validate)

    p = sub.add_parser("pretrain", help="self-supervised pretraining on the train split")
    _add_common(p, "runs/pretrain")
    p.add_argument("--manifest", help="split manifest")
    p.add_argument("--dataset", help="dataset name")
    p.set_defaults(func=_cmd_pretrain)

    p = sub.add_parser("probe", help="train the writer classification head")
    _add_common(p, "runs/probe")
    p.add_argument("--manifest", help="split manifest")
    p.add_argument("--dataset", help="dataset name")
    p.add_argument("--checkpoint", required=True, help="pretraining checkpoint")
    p.set_defaults(func=_cmd_probe)

    p = sub.add_parser("eval-word", help="word-level accuracy on the test split")
    _add_common(p, "runs/eval-word")
    p.add_argument("--manifest", help="split manifest")
    p.add_argument("--dataset", help="dataset name")
    p.add_argument("--classifier", required=True, help="classifier checkpoint")
    p.set_defaults(func=_cmd_eval_word)

    p = sub.add_parser("eval-page", help="majority-vote page accuracy on the test split")
    _add_common(p, "runs/eval-page")
    p.add_argument("--manifest", help="split manifest")
    p.add_argument("--dataset", help="dataset name")
    p.add_argument("--classifier", required=True, help="classifier checkpoint")
    p.set_defaults(func=_cmd_eval_page)

    p = sub.add_parser("finetune", help="semi-supervised fine-tuning on a labeled fraction")
    _add_common(p, "runs/finetune")
    p.add_argument("--manifest", help="split manifest")
    p.add_argument("--dataset", help="dataset name")
    p.add_argument("--checkpoint", required=True, help="pretraining checkpoint")
    p.add_argument("--fraction", type=float, help="labeled fraction of train (default 0.1)")
    p.add_argument(
        "--mode", choices=("intra", "cross", "intra_script", "cross_script"), help="transfer setting"
    )
    p.set_defaults(func=_cmd_finetune)

    p = sub.add_parser("analyze", help="patch correlation maps, t-tests, KDE, ECDF/Q-Q")
    _add_common(p, "runs/analyze")
    p.add_argument("--checkpoint", required=True, help="pretraining checkpoint")
    p.add_argument("--images", required=True, help="manifest of images to analyze")
    p.add_argument("--rho0", type=float, help="null correlation threshold (default 0.8)")
    p.add_argument("--max-images", type=int, help="cap on images analyzed")
    p.set_defaults(func=_cmd_analyze)

    return parser


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args, argv)
    except (ConfigError, ManifestError, SplitError, ProbeError, PretrainError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except FileNotFoundError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
