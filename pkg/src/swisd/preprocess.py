"""Word-image preprocessing.

Raw word images are reduced to their inked region (Otsu threshold + minimal
bounding box), fitted onto a fixed 64x128 canvas by center-cropping or white
padding, augmented into positive pairs, and tiled into eight non-overlapping
32x32 patches stacked along the batch dimension.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np

CANVAS_HEIGHT = 64
CANVAS_WIDTH = 128
PATCH_SIZE = 32
PATCH_ROWS = 2
PATCH_COLS = 4
PATCHES_PER_IMAGE = PATCH_ROWS * PATCH_COLS
WHITE = 255

# Rec. 601 luminance weights for grayscale conversion.
_LUMA = np.array([0.299, 0.587, 0.114])


class DegenerateImageError(ValueError):
    """Raised when an image has no usable ink/background structure."""


def load_word_image(path: str | Path) -> np.ndarray:
    """Load an image file as an HxWx3 uint8 RGB array."""
    raw = cv2.imread(str(path), cv2.IMREAD_COLOR)
    if raw is None:
        raise IOError(f"could not read image: {path}")
    return cv2.cvtColor(raw, cv2.COLOR_BGR2RGB)


def to_grayscale(pixels: np.ndarray) -> np.ndarray:
    """Luminance-weighted grayscale as float64 in [0, 255]."""
    if pixels.ndim == 2:
        return pixels.astype(np.float64)
    return pixels[..., :3].astype(np.float64) @ _LUMA


def otsu_threshold(gray: np.ndarray) -> tuple[int, np.ndarray]:
    """Otsu's threshold over the 256-bin intensity histogram.

    Returns the threshold maximizing between-class variance (smallest wins
    ties) and the ink mask ``gray <= threshold`` — handwriting is assumed
    darker than the background.
    """
    gray = np.asarray(gray)
    levels = np.clip(np.rint(gray), 0, 255).astype(np.uint8)
    hist = np.bincount(levels.ravel(), minlength=256).astype(np.float64)
    total = hist.sum()

    w0 = np.cumsum(hist)  # pixels at intensity <= t
    w1 = total - w0
    valid = (w0 > 0) & (w1 > 0)
    if not valid.any():
        raise DegenerateImageError(
            "constant image: no threshold separates two intensity classes"
        )
    moments = np.cumsum(hist * np.arange(256))
    mu0 = np.divide(moments, w0, out=np.zeros(256), where=w0 > 0)
    mu1 = np.divide(moments[-1] - moments, w1, out=np.zeros(256), where=w1 > 0)
    between = np.where(valid, w0 * w1 * (mu0 - mu1) ** 2, -np.inf)

    threshold = int(np.argmax(between))  # argmax takes the first (smallest) maximizer
    return threshold, levels <= threshold


@dataclass(frozen=True)
class CropResult:
    image: np.ndarray
    bbox: tuple[int, int, int, int]  # (top, left, bottom, right), half-open
    center_of_mass: tuple[float, float]  # (row, col) of the ink pixels


def tight_crop(image: np.ndarray, mask: np.ndarray) -> CropResult:
    """Crop to the minimal axis-aligned bounding box of all ink pixels.

    The ink center of mass is recorded for diagnostics only; the box itself is
    the smallest one containing every foreground pixel.
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != image.shape[:2]:
        raise ValueError(f"mask shape {mask.shape} != image shape {image.shape[:2]}")
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    if rows.size == 0:
        raise DegenerateImageError("empty ink mask: nothing to crop")
    top, bottom = int(rows[0]), int(rows[-1]) + 1
    left, right = int(cols[0]), int(cols[-1]) + 1
    ys, xs = np.nonzero(mask)
    center = (float(ys.mean()), float(xs.mean()))
    return CropResult(image[top:bottom, left:right], (top, left, bottom, right), center)


def fit_to_canvas(
    image: np.ndarray,
    height: int = CANVAS_HEIGHT,
    width: int = CANVAS_WIDTH,
    fill: int = WHITE,
) -> np.ndarray:
    """Center-crop oversized dimensions and white-pad undersized ones to HxW.

    Padding splits symmetrically with the smaller share on the top/left side;
    cropping keeps the central window.  Idempotent on already-fitted images.
    """
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected an HxWx3 image, got shape {img.shape}")

    def _fit_axis(arr: np.ndarray, axis: int, target: int) -> np.ndarray:
        size = arr.shape[axis]
        if size > target:
            start = (size - target) // 2
            sl = [slice(None)] * arr.ndim
            sl[axis] = slice(start, start + target)
            return arr[tuple(sl)]
        if size < target:
            pad = target - size
            before = pad // 2
            widths = [(0, 0)] * arr.ndim
            widths[axis] = (before, pad - before)
            return np.pad(arr, widths, constant_values=fill)
        return arr

    out = _fit_axis(img, 0, height)
    out = _fit_axis(out, 1, width)
    return out


def prepare_canvas(image: np.ndarray) -> np.ndarray:
    """Threshold, tight-crop, and fit a raw word image onto the 64x128 canvas."""
    _, mask = otsu_threshold(to_grayscale(image))
    cropped = tight_crop(image, mask)
    return fit_to_canvas(cropped.image)


def normalize_canvas(canvas: np.ndarray) -> np.ndarray:
    """Map [0, 255] intensities to float32 in [-1, +1]."""
    return (np.asarray(canvas, dtype=np.float32) / 127.5) - 1.0


@dataclass(frozen=True)
class AugmentParams:
    """Magnitudes for the positive-pair augmentation pipeline.

    Values are standard defaults for contrastive-style pretraining at this
    input size: +-0.4 color jitter, translations up to 10 percent of each
    dimension, and random crops at 0.8-1.0 scale resized back to 64x128.
    """

    brightness: float = 0.4
    contrast: float = 0.4
    saturation: float = 0.4
    translate_frac: float = 0.1
    crop_scale_min: float = 0.8
    crop_scale_max: float = 1.0

    @classmethod
    def identity(cls) -> "AugmentParams":
        return cls(
            brightness=0.0,
            contrast=0.0,
            saturation=0.0,
            translate_frac=0.0,
            crop_scale_min=1.0,
            crop_scale_max=1.0,
        )


# Milder magnitudes for downstream probe training.
LIGHT_AUGMENT = AugmentParams(
    brightness=0.2,
    contrast=0.2,
    saturation=0.2,
    translate_frac=0.05,
    crop_scale_min=0.9,
    crop_scale_max=1.0,
)


def _jitter_color(x: np.ndarray, rng: np.random.Generator, params: AugmentParams) -> np.ndarray:
    if params.brightness > 0:
        x = x * rng.uniform(1 - params.brightness, 1 + params.brightness)
    if params.contrast > 0:
        factor = rng.uniform(1 - params.contrast, 1 + params.contrast)
        mean = (x @ _LUMA).mean()
        x = (x - mean) * factor + mean
    if params.saturation > 0:
        factor = rng.uniform(1 - params.saturation, 1 + params.saturation)
        gray = (x @ _LUMA)[..., None]
        x = x * factor + gray * (1 - factor)
    return np.clip(x, 0, 255)


def _translate(x: np.ndarray, rng: np.random.Generator, params: AugmentParams) -> np.ndarray:
    if params.translate_frac <= 0:
        return x
    h, w = x.shape[:2]
    max_dy = int(round(h * params.translate_frac))
    max_dx = int(round(w * params.translate_frac))
    dy = int(rng.integers(-max_dy, max_dy + 1))
    dx = int(rng.integers(-max_dx, max_dx + 1))
    out = np.full_like(x, float(WHITE))
    src_y = slice(max(0, -dy), min(h, h - dy))
    dst_y = slice(max(0, dy), min(h, h + dy))
    src_x = slice(max(0, -dx), min(w, w - dx))
    dst_x = slice(max(0, dx), min(w, w + dx))
    out[dst_y, dst_x] = x[src_y, src_x]
    return out


def _random_resized_crop(
    x: np.ndarray, rng: np.random.Generator, params: AugmentParams
) -> np.ndarray:
    if params.crop_scale_min >= 1.0 and params.crop_scale_max >= 1.0:
        return x
    h, w = x.shape[:2]
    scale = rng.uniform(params.crop_scale_min, params.crop_scale_max)
    crop_h = max(1, int(round(h * scale)))
    crop_w = max(1, int(round(w * scale)))
    top = int(rng.integers(0, h - crop_h + 1))
    left = int(rng.integers(0, w - crop_w + 1))
    window = x[top : top + crop_h, left : left + crop_w]
    if window.shape[:2] == (h, w):
        return window
    return cv2.resize(window, (w, h), interpolation=cv2.INTER_LINEAR)


def augment_view(canvas: np.ndarray, rng: np.random.Generator, params: AugmentParams) -> np.ndarray:
    """One augmented, [-1, +1]-normalized view of a 64x128 canvas."""
    _check_canvas_shape(canvas)
    x = np.asarray(canvas, dtype=np.float64)
    x = _jitter_color(x, rng, params)
    x = _translate(x, rng, params)
    x = _random_resized_crop(x, rng, params)
    return normalize_canvas(x)


def augment_single(canvas: np.ndarray, seed: int, params: AugmentParams = LIGHT_AUGMENT) -> np.ndarray:
    """Seeded single-view augmentation (used during probe training)."""
    return augment_view(canvas, np.random.default_rng(seed), params)


def augment_pair(
    canvas: np.ndarray, seed: int, params: AugmentParams | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Two independently augmented views of one canvas, deterministic per seed.

    The two draws come sequentially from one seeded stream, so the same seed
    reproduces the identical pair bit for bit.
    """
    if params is None:
        params = AugmentParams()
    rng = np.random.default_rng(seed)
    view1 = augment_view(canvas, rng, params)
    view2 = augment_view(canvas, rng, params)
    return view1, view2


def _check_canvas_shape(canvas: np.ndarray) -> None:
    shape = np.asarray(canvas).shape
    if shape[:2] != (CANVAS_HEIGHT, CANVAS_WIDTH) or len(shape) != 3 or shape[2] != 3:
        raise ValueError(
            f"expected a {CANVAS_HEIGHT}x{CANVAS_WIDTH}x3 canvas, got shape {shape}"
        )


@dataclass
class PatchBatch:
    """(N*8)x3x32x32 patch stack; patch p of image n sits at index n*8 + p."""

    patches: np.ndarray
    n_images: int

    def reassemble(self) -> np.ndarray:
        """Invert the tiling back to Nx64x128x3 canvases (lossless)."""
        n = self.n_images
        tiles = self.patches.reshape(n, PATCH_ROWS, PATCH_COLS, 3, PATCH_SIZE, PATCH_SIZE)
        tiles = tiles.transpose(0, 1, 4, 2, 5, 3)
        return tiles.reshape(n, CANVAS_HEIGHT, CANVAS_WIDTH, 3)


def patchify(canvases: np.ndarray | list[np.ndarray]) -> PatchBatch:
    """Tile each 64x128 canvas into 8 non-overlapping 32x32 patches.

    Tiles are ordered row-major over the 2x4 grid and stacked along the batch
    dimension, channels first.
    """
    if isinstance(canvases, (list, tuple)):
        for c in canvases:
            _check_canvas_shape(c)
        stacked = np.stack([np.asarray(c) for c in canvases])
    else:
        stacked = np.asarray(canvases)
        if stacked.ndim == 3:
            stacked = stacked[None]
        if stacked.ndim != 4:
            raise ValueError(f"expected Nx64x128x3 canvases, got shape {stacked.shape}")
        _check_canvas_shape(stacked[0])

    n = stacked.shape[0]
    tiles = stacked.reshape(n, PATCH_ROWS, PATCH_SIZE, PATCH_COLS, PATCH_SIZE, 3)
    tiles = tiles.transpose(0, 1, 3, 5, 2, 4)  # N x rows x cols x C x 32 x 32
    patches = np.ascontiguousarray(
        tiles.reshape(n * PATCHES_PER_IMAGE, 3, PATCH_SIZE, PATCH_SIZE)
    )
    return PatchBatch(patches=patches, n_images=n)


def dump_image(path: str | Path, image: np.ndarray) -> None:
    """Write an RGB (or float [-1,1]) image losslessly as PNG for debugging."""
    arr = np.asarray(image)
    if arr.dtype != np.uint8:
        arr = np.clip((arr + 1.0) * 127.5, 0, 255).astype(np.uint8)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if not cv2.imwrite(str(path), cv2.cvtColor(arr, cv2.COLOR_RGB2BGR)):
        raise IOError(f"could not write image: {path}")
