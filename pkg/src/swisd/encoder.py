"""Patch encoders: modified ResNet-50 backbone, compact conv backbone, projector.

Patches enter as an (N*8)x3x32x32 stack.  The backbone embeds each patch, the
projector maps it to the representation width, and the per-patch vectors are
reshaped to N x D x 8, viewed as N x D x 2 x 4, and mean-pooled over the 2x4
grid — arithmetically the mean of the 8 patch embeddings of each image.
"""

from __future__ import annotations

import os
import tempfile
from dataclasses import asdict, dataclass
from pathlib import Path

import torch
from torch import nn

from .preprocess import PATCH_COLS, PATCH_ROWS, PATCH_SIZE, PATCHES_PER_IMAGE

CHECKPOINT_VERSION = 1

ARCHITECTURES = ("resnet50", "small_cnn")


@dataclass(frozen=True)
class EncoderConfig:
    """Backbone + projector configuration.

    ``resnet50`` is the full-scale recipe: a 3x3/64 stem with the stem
    max-pool removed and a 2048-wide output.  ``small_cnn`` is a reduced
    4-block desk-scale backbone whose width is set by ``feature_dim``.
    """

    arch: str = "resnet50"
    feature_dim: int = 2048
    stem_kernel: int = 3
    stem_channels: int = 64
    drop_stem_pool: bool = True
    projector_hidden: int = 2048
    projector_norm: bool = True
    small_cnn_channels: tuple[int, ...] = (32, 64, 96)

    def validate(self) -> None:
        if self.arch not in ARCHITECTURES:
            raise ValueError(f"unknown arch {self.arch!r}; expected one of {ARCHITECTURES}")
        if self.arch == "resnet50":
            if self.feature_dim != 2048:
                raise ValueError("resnet50 backbone has a fixed 2048-dim output")
            if self.stem_channels != 64:
                raise ValueError("resnet50 stem must keep 64 channels")
        if self.feature_dim < 1 or self.projector_hidden < 1:
            raise ValueError("feature_dim and projector_hidden must be positive")
        if self.stem_kernel % 2 != 1:
            raise ValueError("stem_kernel must be odd")


class SmallConvBackbone(nn.Module):
    """Four stride-2 conv blocks and global average pooling; for desk-scale runs."""

    def __init__(self, channels: tuple[int, ...], out_dim: int, stem_kernel: int = 3):
        super().__init__()
        widths = list(channels) + [out_dim]
        blocks = []
        in_ch = 3
        for i, out_ch in enumerate(widths):
            kernel = stem_kernel if i == 0 else 3
            blocks += [
                nn.Conv2d(in_ch, out_ch, kernel_size=kernel, stride=2, padding=kernel // 2, bias=False),
                nn.BatchNorm2d(out_ch),
                nn.ReLU(inplace=True),
            ]
            in_ch = out_ch
        self.features = nn.Sequential(*blocks)
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.out_dim = out_dim

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.pool(self.features(x)).flatten(1)


def _modified_resnet50(config: EncoderConfig) -> nn.Module:
    from torchvision.models import resnet50

    net = resnet50(weights=None)
    # Small-input stem: 3x3/64 convolution, stride 1, and no stem max-pool.
    net.conv1 = nn.Conv2d(
        3,
        config.stem_channels,
        kernel_size=config.stem_kernel,
        stride=1,
        padding=config.stem_kernel // 2,
        bias=False,
    )
    if config.drop_stem_pool:
        net.maxpool = nn.Identity()
    net.fc = nn.Identity()
    return net


def build_backbone(config: EncoderConfig) -> nn.Module:
    config.validate()
    if config.arch == "resnet50":
        return _modified_resnet50(config)
    return SmallConvBackbone(config.small_cnn_channels, config.feature_dim, config.stem_kernel)


class Projector(nn.Module):
    """Two affine layers with one intermediate rectification.

    Batch-statistics normalization after the first layer is the default and
    can be switched off (useful for exact algebraic checks).
    """

    def __init__(self, in_dim: int, hidden_dim: int, out_dim: int, use_norm: bool = True):
        super().__init__()
        self.in_dim = in_dim
        layers: list[nn.Module] = [nn.Linear(in_dim, hidden_dim)]
        if use_norm:
            layers.append(nn.BatchNorm1d(hidden_dim))
        layers.append(nn.ReLU(inplace=True))
        layers.append(nn.Linear(hidden_dim, out_dim))
        self.net = nn.Sequential(*layers)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ValueError(
                f"projector expects BxC input with C={self.in_dim}, got shape {tuple(x.shape)}"
            )
        return self.net(x)


def build_projector(config: EncoderConfig) -> Projector:
    return Projector(
        config.feature_dim,
        config.projector_hidden,
        config.feature_dim,
        use_norm=config.projector_norm,
    )


def check_patch_stack(patches: torch.Tensor) -> int:
    """Validate an (N*8)x3x32x32 patch stack and return N."""
    if patches.ndim != 4 or patches.shape[1:] != (3, PATCH_SIZE, PATCH_SIZE):
        raise ValueError(
            f"expected (N*8)x3x{PATCH_SIZE}x{PATCH_SIZE} patches, got shape {tuple(patches.shape)}"
        )
    if patches.shape[0] % PATCHES_PER_IMAGE != 0:
        raise ValueError(
            f"patch count {patches.shape[0]} is not a multiple of {PATCHES_PER_IMAGE}"
        )
    return patches.shape[0] // PATCHES_PER_IMAGE


def pool_patch_features(feats: torch.Tensor, n_images: int) -> torch.Tensor:
    """(N*8)xD per-patch vectors -> NxDx8 -> NxDx2x4 -> mean over the grid."""
    if feats.ndim != 2 or feats.shape[0] != n_images * PATCHES_PER_IMAGE:
        raise ValueError(
            f"expected {n_images * PATCHES_PER_IMAGE}xD patch features, got {tuple(feats.shape)}"
        )
    dim = feats.shape[1]
    grid = feats.reshape(n_images, PATCHES_PER_IMAGE, dim).permute(0, 2, 1)
    grid = grid.reshape(n_images, dim, PATCH_ROWS, PATCH_COLS)
    return grid.mean(dim=(2, 3))


class PatchEncoder(nn.Module):
    """Weight-shared backbone + projector with the stack/reshape/pool contract."""

    def __init__(self, backbone: nn.Module, projector: nn.Module, feature_dim: int):
        super().__init__()
        self.backbone = backbone
        self.projector = projector
        self.feature_dim = feature_dim

    def forward(
        self, patches: torch.Tensor, return_patch_features: bool = False
    ) -> torch.Tensor | tuple[torch.Tensor, torch.Tensor]:
        n = check_patch_stack(patches)
        feats = self.backbone(patches)
        projected = self.projector(feats)
        pooled = pool_patch_features(projected, n)
        if return_patch_features:
            return pooled, projected
        return pooled

    def encode_backbone(self, patches: torch.Tensor) -> torch.Tensor:
        """Pooled raw backbone features (projector bypassed), for downstream heads."""
        n = check_patch_stack(patches)
        return pool_patch_features(self.backbone(patches), n)


def build_encoder(config: EncoderConfig) -> PatchEncoder:
    return PatchEncoder(build_backbone(config), build_projector(config), config.feature_dim)


def forward_encode(model: PatchEncoder, patches) -> torch.Tensor:
    """Functional wrapper: patch stack (array or tensor) -> NxD embeddings."""
    t = torch.as_tensor(patches, dtype=torch.float32)
    return model(t)


def atomic_save(payload: dict, path: str | Path) -> Path:
    """torch.save via a temp file + rename so readers never see partial writes."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            torch.save(payload, fh)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def save_pretrain_checkpoint(
    path: str | Path, model: PatchEncoder, config: EncoderConfig, extra: dict | None = None
) -> Path:
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "kind": "pretrain",
        "encoder_config": asdict(config),
        "backbone": model.backbone.state_dict(),
        "projector": model.projector.state_dict(),
        "extra": extra or {},
    }
    return atomic_save(payload, path)


def _read_checkpoint(path: str | Path, kind: str) -> dict:
    payload = torch.load(Path(path), map_location="cpu", weights_only=False)
    version = payload.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version!r} in {path}")
    if payload.get("kind") != kind:
        raise ValueError(f"expected a {kind!r} checkpoint, got {payload.get('kind')!r}")
    return payload


def _config_from_payload(payload: dict) -> EncoderConfig:
    raw = dict(payload["encoder_config"])
    if isinstance(raw.get("small_cnn_channels"), list):
        raw["small_cnn_channels"] = tuple(raw["small_cnn_channels"])
    return EncoderConfig(**raw)


def load_pretrain_checkpoint(path: str | Path) -> tuple[PatchEncoder, EncoderConfig, dict]:
    """Rebuild the full pretraining encoder (backbone + projector)."""
    payload = _read_checkpoint(path, "pretrain")
    config = _config_from_payload(payload)
    model = build_encoder(config)
    model.backbone.load_state_dict(payload["backbone"])
    model.projector.load_state_dict(payload["projector"])
    return model, config, payload.get("extra", {})


def load_backbone(path: str | Path) -> tuple[nn.Module, EncoderConfig]:
    """Load only the backbone from a pretraining checkpoint (projector dropped)."""
    payload = _read_checkpoint(path, "pretrain")
    config = _config_from_payload(payload)
    backbone = build_backbone(config)
    backbone.load_state_dict(payload["backbone"])
    return backbone, config
