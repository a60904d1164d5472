"""Put a pretrained encoder to work: linear writer probe, word- and
page-level scoring, the majority vote, and semi-supervised fine-tuning.

Run with:  python3 demos/05_writer_probe.py   (about a minute on CPU)
"""

import tempfile
from pathlib import Path

from swisd.encoder import EncoderConfig
from swisd.manifest import make_fragnet_splits, parse_manifest
from swisd.pretrain import PretrainConfig, run_pretraining
from swisd.probe import (
    REFERENCE_ACCURACIES,
    ProbeConfig,
    evaluate_page_level,
    evaluate_word_level,
    finetune_semi_supervised,
    majority_vote,
    train_linear_probe,
)
from swisd.synthetic import generate_dataset


def banner(title: str) -> None:
    print(f"\n=== {title} ===")


def main() -> None:
    root = Path(tempfile.mkdtemp(prefix="swisd-demo05-"))
    manifest_path = generate_dataset(
        root, num_writers=4, pages_per_writer=4, words_per_page=10, seed=21
    )
    manifest = make_fragnet_splits(parse_manifest(manifest_path, "CVL"), seed=0)
    print(f"{len(manifest.subset('train'))} train / {len(manifest.subset('test'))} test "
          f"words, {manifest.num_writers} writers")

    encoder_config = EncoderConfig(
        arch="small_cnn",
        feature_dim=32,
        projector_hidden=32,
        small_cnn_channels=(8, 16, 24),
    )

    banner("1. self-supervised pretraining (no labels)")
    pretrain_cfg = PretrainConfig(
        epochs=10, base_lr=3e-3, warmup_epochs=2, batch_size=32, checkpoint_interval=0
    )
    result = run_pretraining(manifest, pretrain_cfg, encoder_config, root / "pretrain", seed=42)
    print(f"checkpoint: {result.checkpoint_path}")

    banner("2. linear probe on frozen features")
    probe_cfg = ProbeConfig(
        epochs=200, lr=0.05, finetune_mode="linear_only", augment=False
    )
    classifier, history = train_linear_probe(
        result.checkpoint_path, manifest, probe_cfg, seed=0
    )
    print(f"classes: {classifier.classes}")
    print(f"probe CE loss: {history[0]['loss']:.3f} (epoch 0) -> "
          f"{history[-1]['loss']:.3f} (epoch {history[-1]['epoch']})")
    print("the backbone stays frozen; only the linear head trains.")

    banner("3. word-level accuracy")
    word = evaluate_word_level(classifier, manifest)
    print(f"{word.accuracy:.2f}% over {word.n_words} test words "
          f"({word.n_correct} correct, {word.n_unreadable} unreadable)")

    banner("4. page-level accuracy by majority vote")
    page = evaluate_page_level(classifier, manifest)
    print(f"{page.accuracy:.2f}% over {page.n_pages} test pages "
          f"({page.n_correct} correct, {len(page.excluded_pages)} excluded)")
    sample = page.pages[0]
    print(f"example page {sample.page_id!r}: true writer {sample.true_writer!r}, "
          f"{len(sample.word_predictions)} word votes -> {sample.voted_writer!r}")

    banner("5. how the vote breaks ties")
    print("count wins:     ", majority_vote([("a", 0.9), ("b", 0.4), ("b", 0.3)]))
    print("sum breaks tie: ", majority_vote([("a", 0.9), ("b", 0.5), ("a", 0.2), ("b", 0.7)]))
    print("id breaks tie:  ", majority_vote([("a", 0.5), ("b", 0.5)]))

    banner("6. semi-supervised fine-tuning on 10% of the labels")
    finetune = finetune_semi_supervised(
        result.checkpoint_path,
        manifest,
        ProbeConfig(epochs=20, lr=1e-3, augment=False),
        fraction=0.10,
        mode="intra_script",
        seed=0,
    )
    print(f"labeled {finetune.n_labeled} of {len(manifest.subset('train'))} train words "
          f"(stratified per writer), full backbone unfrozen")
    print(f"page accuracy: {finetune.page_report.accuracy:.2f}%")

    banner("7. published reference accuracies (full-scale runs)")
    for level, table in REFERENCE_ACCURACIES.items():
        for name, value in table.items():
            print(f"  {level:>13}  {name:<15} {value:.2f}%")
    print("those numbers come from full-scale GPU runs on the real corpora;")
    print("this demo's synthetic miniature is for exercising the machinery.")


if __name__ == "__main__":
    main()
