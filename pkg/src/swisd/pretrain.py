"""Self-supervised pretraining loop: schedules, optimization, collapse monitoring.

Per batch: every canvas is augmented into a positive pair, both views are
patchified and pushed through the weight-shared encoder, the embeddings are
batch-normalized and standardized per dimension, and one Adam step minimizes
the decorrelation loss.  Per epoch the loop logs the loss decomposition, the
mean cross-correlation diagnostics (on correlation scale, i.e. C/N), and the
per-dimension variance spectrum of the raw embeddings with its effective rank.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .data import CanvasStore, batched_indices, canvases_to_patches
from .encoder import EncoderConfig, PatchEncoder, build_encoder, save_pretrain_checkpoint
from .losses import LOSS_VARIANTS, DegenerateDimensionError, decorrelation_objective
from .manifest import DatasetManifest, validate_dataset
from .preprocess import AugmentParams, augment_pair
from .seeding import derive_seed


class PretrainError(RuntimeError):
    """Raised when a pretraining run cannot start or continue."""


@dataclass
class PretrainConfig:
    epochs: int = 500
    base_lr: float = 1e-3
    warmup_epochs: int = 10
    batch_size: int = 64
    loss_variant: str = "literal"
    eps: float = 1e-8
    unbiased: bool = False
    weight_decay: float = 0.0
    betas: tuple[float, float] = (0.9, 0.999)
    checkpoint_interval: int = 100
    c_dump_interval: int = 0
    max_missing_fraction: float = 0.01
    cache_images: bool = True
    log_variance_spectrum: bool = True

    def validate(self) -> None:
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not 0 <= self.warmup_epochs < self.epochs:
            raise ValueError("warmup_epochs must satisfy 0 <= warmup < epochs")
        if self.base_lr <= 0:
            raise ValueError("base_lr must be positive")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 (batch-dimension normalization)")
        if self.loss_variant not in LOSS_VARIANTS:
            raise ValueError(f"loss_variant must be one of {LOSS_VARIANTS}")
        if self.eps < 0:
            raise ValueError("eps must be >= 0")


def lr_schedule(epoch: int, config: PretrainConfig) -> float:
    """Linear warmup from 0 to base_lr, then cosine annealing to 0."""
    if not 0 <= epoch < config.epochs:
        raise ValueError(f"epoch {epoch} outside [0, {config.epochs})")
    if epoch < config.warmup_epochs:
        return config.base_lr * epoch / config.warmup_epochs
    progress = (epoch - config.warmup_epochs) / (config.epochs - config.warmup_epochs)
    return config.base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


def effective_rank(spectrum: np.ndarray) -> float:
    """exp(entropy) of a nonnegative spectrum normalized to a distribution.

    D identical values give D; mass concentrated on one value gives 1; an
    all-zero spectrum (total collapse) gives 0.
    """
    s = np.asarray(spectrum, dtype=np.float64).ravel()
    if s.size == 0 or (s < 0).any():
        raise ValueError("spectrum must be a nonempty nonnegative vector")
    total = s.sum()
    if total <= 0:
        return 0.0
    p = s / total
    p = p[p > 0]
    return float(np.exp(-(p * np.log(p)).sum()))


def covariance_effective_rank(samples: np.ndarray) -> float:
    """Effective rank of the sample covariance eigenvalue spectrum."""
    x = np.asarray(samples, dtype=np.float64)
    x = x - x.mean(axis=0, keepdims=True)
    sv = np.linalg.svd(x, compute_uv=False)
    return effective_rank(sv**2 / max(1, x.shape[0] - 1))


@dataclass
class PretrainResult:
    checkpoint_path: Path
    metrics_path: Path
    checkpoint_paths: list[Path]
    history: list[dict]
    skipped_batches: int


@dataclass
class _EpochStats:
    """Running aggregates for one epoch of batches."""

    loss: float = 0.0
    on_diag: float = 0.0
    off_diag: float = 0.0
    diag_mean: float = 0.0
    offdiag_mean_abs: float = 0.0
    n_batches: int = 0
    skipped: int = 0
    embeddings: list[np.ndarray] = field(default_factory=list)

    def update(self, breakdown, c: torch.Tensor, raw_z: torch.Tensor) -> None:
        n = raw_z.shape[0]
        corr = (c / n).cpu().numpy()
        d = corr.shape[0]
        self.loss += float(breakdown.total.detach())
        self.on_diag += float(breakdown.on_diag.detach())
        self.off_diag += float(breakdown.off_diag.detach())
        self.diag_mean += float(np.trace(corr) / d)
        if d > 1:
            off = np.abs(corr).sum() - np.abs(np.diagonal(corr)).sum()
            self.offdiag_mean_abs += float(off / (d * (d - 1)))
        self.n_batches += 1
        self.embeddings.append(raw_z.detach().double().cpu().numpy())

    def summary(self, epoch: int, lr: float, log_spectrum: bool = True) -> dict:
        b = max(1, self.n_batches)
        row = {
            "epoch": epoch,
            "lr": lr,
            "loss": self.loss / b,
            "on_diag": self.on_diag / b,
            "off_diag": self.off_diag / b,
            "diag_mean": self.diag_mean / b,
            "offdiag_mean_abs": self.offdiag_mean_abs / b,
            "skipped_batches": self.skipped,
            "n_batches": self.n_batches,
        }
        if self.embeddings:
            emb = np.concatenate(self.embeddings)
            variances = emb.var(axis=0)
            row["variance_erank"] = effective_rank(variances)
            row["cov_erank"] = covariance_effective_rank(emb)
            row["min_dim_variance"] = float(variances.min())
            if log_spectrum:
                row["variance_spectrum"] = [float(v) for v in variances]
        return row


def _dump_c_matrix(path: Path, c: torch.Tensor, breakdown) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        fh.write(f"# loss_total\t{float(breakdown.total.detach())!r}\n")
        fh.write(f"# loss_on_diag\t{float(breakdown.on_diag.detach())!r}\n")
        fh.write(f"# loss_off_diag\t{float(breakdown.off_diag.detach())!r}\n")
        np.savetxt(fh, c.cpu().numpy(), delimiter="\t")


def run_pretraining(
    manifest: DatasetManifest,
    config: PretrainConfig,
    encoder_config: EncoderConfig,
    out_dir: str | Path,
    seed: int = 0,
    augment: AugmentParams | None = None,
    device: str = "cpu",
) -> PretrainResult:
    """Train the encoder on the manifest's train split; returns paths + history.

    Deterministic given (manifest, configs, seed) on one device: weight init,
    shuffling, and per-sample augmentation all derive from named substreams of
    the root seed.
    """
    config.validate()
    encoder_config.validate()
    out_dir = Path(out_dir)
    ckpt_dir = out_dir / "checkpoints"
    metrics_dir = out_dir / "metrics"
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    metrics_dir.mkdir(parents=True, exist_ok=True)

    train_records = manifest.subset("train")
    if not train_records:
        raise PretrainError("manifest has no train records; run the split step first")
    report = validate_dataset(
        manifest.with_records(train_records), check_readable=False
    )
    if report.missing_fraction > config.max_missing_fraction:
        raise PretrainError(
            f"{report.missing_fraction:.1%} of train files are missing "
            f"(threshold {config.max_missing_fraction:.1%}); refusing to pretrain"
        )

    if augment is None:
        augment = AugmentParams()

    torch.manual_seed(derive_seed(seed, "init"))
    model = build_encoder(encoder_config).to(device)
    model.train()
    optimizer = torch.optim.Adam(
        model.parameters(),
        lr=config.base_lr,
        betas=config.betas,
        weight_decay=config.weight_decay,
    )

    store = CanvasStore(manifest, train_records, cache=config.cache_images)
    metrics_path = metrics_dir / "pretrain_metrics.jsonl"
    history: list[dict] = []
    written: list[Path] = []
    total_skipped = 0

    with metrics_path.open("w", encoding="utf-8") as metrics_fh:
        for epoch in range(config.epochs):
            lr = lr_schedule(epoch, config)
            for group in optimizer.param_groups:
                group["lr"] = lr

            stats = _EpochStats()
            rng = np.random.default_rng(derive_seed(seed, "shuffle", epoch))
            for batch in batched_indices(len(store), config.batch_size, rng):
                if batch.size < 2:
                    continue  # batch-dimension normalization needs N >= 2
                views1, views2 = [], []
                for idx in batch:
                    v1, v2 = augment_pair(
                        store.canvas(int(idx)),
                        derive_seed(seed, "augment", epoch, int(idx)),
                        augment,
                    )
                    views1.append(v1)
                    views2.append(v2)
                p1 = canvases_to_patches(views1).to(device)
                p2 = canvases_to_patches(views2).to(device)

                # Both views pass through the same module: weight sharing.
                z = model(p1)
                zp = model(p2)
                try:
                    breakdown, c = decorrelation_objective(
                        z, zp, variant=config.loss_variant,
                        eps=config.eps, unbiased=config.unbiased,
                    )
                except DegenerateDimensionError as err:
                    stats.skipped += 1
                    total_skipped += 1
                    optimizer.zero_grad(set_to_none=True)
                    print(f"epoch {epoch}: skipped batch ({err})")
                    continue
                if not torch.isfinite(breakdown.total):
                    dump = metrics_dir / f"abort_c_matrix_epoch_{epoch:04d}.tsv"
                    _dump_c_matrix(dump, c, breakdown)
                    raise PretrainError(
                        f"non-finite loss at epoch {epoch}; C matrix dumped to {dump}"
                    )

                optimizer.zero_grad(set_to_none=True)
                breakdown.total.backward()
                optimizer.step()
                stats.update(breakdown, c, z)

            row = stats.summary(epoch, lr, log_spectrum=config.log_variance_spectrum)
            metrics_fh.write(json.dumps(row) + "\n")
            metrics_fh.flush()
            history.append(row)

            if config.c_dump_interval > 0 and epoch % config.c_dump_interval == 0 and stats.n_batches:
                _dump_c_matrix(metrics_dir / f"c_matrix_epoch_{epoch:04d}.tsv", c, breakdown)
            if config.checkpoint_interval > 0 and (epoch + 1) % config.checkpoint_interval == 0:
                path = ckpt_dir / f"ckpt_epoch_{epoch + 1:04d}.pt"
                save_pretrain_checkpoint(path, model, encoder_config, {"epoch": epoch + 1, "seed": seed})
                written.append(path)

    final_path = ckpt_dir / "ckpt_final.pt"
    save_pretrain_checkpoint(final_path, model, encoder_config, {"epoch": config.epochs, "seed": seed})
    written.append(final_path)
    return PretrainResult(
        checkpoint_path=final_path,
        metrics_path=metrics_path,
        checkpoint_paths=written,
        history=history,
        skipped_batches=total_skipped,
    )


def read_metrics(path: str | Path) -> list[dict]:
    """Replay a line-delimited metrics log."""
    rows = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append(json.loads(line))
    return rows
