"""Statistical disentanglement analysis of per-patch embeddings.

For one word image, the 8 patch embeddings (pre-pooling projector outputs) are
correlated pairwise over their feature coordinates, giving an 8x8 Pearson map
with 28 unique off-diagonal pairs.  A left-tailed one-sample t-test against
rho0 = 0.8 asks whether the patches are decorrelated below that threshold;
Bonferroni correction handles multiplicity.  KDE, ECDF, and Q-Q helpers
support the distributional plots.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
import torch
from scipy import special

from .encoder import EncoderConfig, PatchEncoder, load_pretrain_checkpoint
from .manifest import DatasetManifest, SampleRecord
from .preprocess import PATCHES_PER_IMAGE, load_word_image, normalize_canvas, patchify, prepare_canvas

N_PAIRS = PATCHES_PER_IMAGE * (PATCHES_PER_IMAGE - 1) // 2  # 28
DEFAULT_RHO0 = 0.8
DEFAULT_ALPHA = 0.05


class DegenerateSampleError(ValueError):
    """Raised when a statistic is undefined (zero spread, constant sample)."""


def pearson_correlation_matrix(vectors: np.ndarray) -> tuple[np.ndarray, int]:
    """Pairwise Pearson correlations between rows of a k x d matrix.

    Rows with zero variance make their pairs undefined: those entries are NaN
    and the count of undefined upper-triangle pairs is returned.  The diagonal
    is exactly 1 for every row.
    """
    x = np.asarray(vectors, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2 or x.shape[1] < 2:
        raise ValueError(f"expected a k x d matrix with k, d >= 2, got shape {x.shape}")
    centered = x - x.mean(axis=1, keepdims=True)
    norms = np.sqrt((centered * centered).sum(axis=1))
    with np.errstate(invalid="ignore", divide="ignore"):
        rho = (centered @ centered.T) / np.outer(norms, norms)
    rho[norms == 0, :] = np.nan
    rho[:, norms == 0] = np.nan
    np.fill_diagonal(rho, 1.0)
    finite = np.clip(rho, -1.0, 1.0)
    rho = np.where(np.isnan(rho), np.nan, finite)
    iu = np.triu_indices_from(rho, k=1)
    n_undefined = int(np.isnan(rho[iu]).sum())
    return rho, n_undefined


@dataclass(frozen=True)
class CorrelationMap:
    rho: np.ndarray
    n_undefined: int

    def off_diagonal_values(self) -> np.ndarray:
        """The finite unique off-diagonal correlations (at most 28)."""
        iu = np.triu_indices_from(self.rho, k=1)
        values = self.rho[iu]
        return values[np.isfinite(values)]


def _load_encoder(
    checkpoint: str | Path | PatchEncoder,
) -> PatchEncoder:
    if isinstance(checkpoint, PatchEncoder):
        return checkpoint
    model, _, _ = load_pretrain_checkpoint(checkpoint)
    return model


def patch_embeddings(model: PatchEncoder, canvas: np.ndarray) -> np.ndarray:
    """8 x D pre-pooling projector outputs for one 64x128 uint8 canvas."""
    patches = patchify(normalize_canvas(canvas)[None]).patches
    t = torch.from_numpy(np.ascontiguousarray(patches, dtype=np.float32))
    model.eval()
    with torch.no_grad():
        _, projected = model(t, return_patch_features=True)
    return projected.double().cpu().numpy()


def patch_correlation_map(
    checkpoint: str | Path | PatchEncoder, canvas: np.ndarray
) -> CorrelationMap:
    """Pearson correlation map between the 8 patch embeddings of one canvas."""
    model = _load_encoder(checkpoint)
    emb = patch_embeddings(model, canvas)
    rho, n_undefined = pearson_correlation_matrix(emb)
    return CorrelationMap(rho=rho, n_undefined=n_undefined)


def student_t_cdf(t: float, dof: int) -> float:
    """Left-tail CDF of Student's t via the regularized incomplete beta function."""
    if dof < 1:
        raise ValueError("dof must be >= 1")
    t = float(t)
    if math.isnan(t):
        return math.nan
    if math.isinf(t):
        return 0.0 if t < 0 else 1.0
    x = dof / (dof + t * t)
    tail = 0.5 * float(special.betainc(dof / 2.0, 0.5, x))
    return tail if t <= 0 else 1.0 - tail


@dataclass(frozen=True)
class TTestResult:
    t_statistic: float
    dof: int
    p_value: float
    n: int
    sample_mean: float
    sample_std: float
    rho0: float = DEFAULT_RHO0
    alpha: float = DEFAULT_ALPHA
    bonferroni_alpha: float = DEFAULT_ALPHA
    reject_null: bool = False

    def as_dict(self) -> dict:
        return {
            "t_statistic": self.t_statistic,
            "dof": self.dof,
            "p_value": self.p_value,
            "n": self.n,
            "sample_mean": self.sample_mean,
            "sample_std": self.sample_std,
            "rho0": self.rho0,
            "alpha": self.alpha,
            "bonferroni_alpha": self.bonferroni_alpha,
            "reject_null": self.reject_null,
        }


def left_tailed_t_test(
    correlations: Sequence[float],
    rho0: float = DEFAULT_RHO0,
    alpha: float = DEFAULT_ALPHA,
) -> TTestResult:
    """One-sample left-tailed t-test of mean(correlations) against rho0.

    t = (mean - rho0) / (s / sqrt(n)) with the unbiased sample std; dof = n-1;
    p is the left-tail Student-t CDF.  Null (mean >= rho0) is rejected when
    p < alpha.
    """
    values = np.asarray(list(correlations), dtype=np.float64)
    if values.size < 2:
        raise ValueError("need at least 2 correlation values")
    if not np.isfinite(values).all():
        raise ValueError("correlations must be finite (filter undefined pairs first)")
    n = int(values.size)
    mean = float(values.mean())
    std = float(values.std(ddof=1))
    if std <= 0.0:
        raise DegenerateSampleError("all correlation values are identical; spread is zero")
    t = (mean - rho0) / (std / math.sqrt(n))
    p = student_t_cdf(t, n - 1)
    return TTestResult(
        t_statistic=t,
        dof=n - 1,
        p_value=p,
        n=n,
        sample_mean=mean,
        sample_std=std,
        rho0=rho0,
        alpha=alpha,
        bonferroni_alpha=alpha,
        reject_null=p < alpha,
    )


def bonferroni_adjust(
    results: Sequence[TTestResult], alpha: float = DEFAULT_ALPHA
) -> list[TTestResult]:
    """Recompute rejection flags against the family-wise threshold alpha/m."""
    if not results:
        raise ValueError("need at least one test result")
    threshold = alpha / len(results)
    return [
        replace(r, alpha=alpha, bonferroni_alpha=threshold, reject_null=r.p_value < threshold)
        for r in results
    ]


def pairwise_test_maps(
    corr_map: CorrelationMap,
    rho0: float = DEFAULT_RHO0,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-pair t and left-tail p maps sharing the sample spread of the 28 pairs.

    Each off-diagonal entry gets t_ij = (rho_ij - rho0) / (s / sqrt(n)) where s
    and n come from the finite unique pairs, so an individual pair can be read
    against the same scale as the mean test.  Diagonal and undefined entries
    are NaN.
    """
    values = corr_map.off_diagonal_values()
    if values.size < 2:
        raise DegenerateSampleError("fewer than 2 finite pairs; maps undefined")
    std = float(values.std(ddof=1))
    if std <= 0.0:
        raise DegenerateSampleError("all correlation values are identical; spread is zero")
    n = int(values.size)
    se = std / math.sqrt(n)
    t_map = (corr_map.rho - rho0) / se
    np.fill_diagonal(t_map, np.nan)
    p_map = np.full_like(t_map, np.nan)
    finite = np.isfinite(t_map)
    p_map[finite] = [student_t_cdf(v, n - 1) for v in t_map[finite]]
    return t_map, p_map


class KdeCurve(NamedTuple):
    grid: np.ndarray
    density: np.ndarray
    bandwidth: float

    def area(self) -> float:
        return float(np.trapezoid(self.density, self.grid))


def silverman_bandwidth(values: np.ndarray) -> float:
    """0.9 * min(std, IQR/1.34) * n^(-1/5); falls back to std when IQR is 0."""
    v = np.asarray(values, dtype=np.float64)
    std = float(v.std(ddof=1))
    q75, q25 = np.percentile(v, [75.0, 25.0])
    iqr = float(q75 - q25)
    spread = min(std, iqr / 1.34) if iqr > 0 else std
    if spread <= 0:
        raise DegenerateSampleError("zero spread; bandwidth undefined")
    return 0.9 * spread * v.size ** (-0.2)


def kde_density(
    values: Sequence[float],
    num_points: int = 512,
    bandwidth: float | None = None,
    margin_bandwidths: float = 3.0,
) -> KdeCurve:
    """Gaussian KDE on a uniform grid spanning [min - 3h, max + 3h]."""
    v = np.asarray(list(values), dtype=np.float64)
    if v.size < 2:
        raise ValueError("need at least 2 values")
    if not np.isfinite(v).all():
        raise ValueError("values must be finite")
    if np.unique(v).size < 2:
        raise DegenerateSampleError("all values identical; density degenerates to a point mass")
    h = silverman_bandwidth(v) if bandwidth is None else float(bandwidth)
    if h <= 0:
        raise ValueError("bandwidth must be positive")
    grid = np.linspace(v.min() - margin_bandwidths * h, v.max() + margin_bandwidths * h, num_points)
    z = (grid[:, None] - v[None, :]) / h
    density = np.exp(-0.5 * z * z).sum(axis=1) / (v.size * h * math.sqrt(2.0 * math.pi))
    return KdeCurve(grid=grid, density=density, bandwidth=h)


class NormalityDiagnostics(NamedTuple):
    ecdf: np.ndarray  # (n, 2): sorted value, rank/n
    qq: np.ndarray  # (n, 2): standard-normal quantile at (i-0.5)/n, sample quantile


def normality_diagnostics(values: Sequence[float]) -> NormalityDiagnostics:
    """Empirical CDF steps and normal Q-Q points for a sample."""
    v = np.sort(np.asarray(list(values), dtype=np.float64))
    n = v.size
    if n < 3:
        raise ValueError("need at least 3 values")
    ranks = np.arange(1, n + 1, dtype=np.float64)
    ecdf = np.column_stack([v, ranks / n])
    theoretical = special.ndtri((ranks - 0.5) / n)
    qq = np.column_stack([theoretical, v])
    return NormalityDiagnostics(ecdf=ecdf, qq=qq)


def _write_matrix(path: Path, matrix: np.ndarray) -> None:
    np.savetxt(path, matrix, delimiter="\t")


def _write_points(path: Path, points: np.ndarray, header: str) -> None:
    np.savetxt(path, points, delimiter="\t", header=header, comments="")


@dataclass
class ImageAnalysis:
    record: SampleRecord
    corr_map: CorrelationMap
    mean_test: TTestResult | None
    pairs_rejected_raw: int | None
    pairs_rejected_bonferroni: int | None
    error: str | None = None


def analyze_images(
    checkpoint: str | Path | PatchEncoder,
    manifest: DatasetManifest,
    out_dir: str | Path,
    records: Sequence[SampleRecord] | None = None,
    rho0: float = DEFAULT_RHO0,
    alpha: float = DEFAULT_ALPHA,
    max_images: int | None = None,
) -> dict:
    """Run the per-image correlation analysis and write the result files.

    Per image: correlation map, per-pair t and p maps, KDE curve, ECDF and Q-Q
    points, each as a delimited text file.  The summary JSON aggregates the
    mean tests across images (Bonferroni over images) and the per-image pair
    counts (Bonferroni over the 28 pairs).
    """
    model = _load_encoder(checkpoint)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if records is None:
        records = manifest.records
    if max_images is not None:
        records = records[:max_images]
    if not records:
        raise ValueError("no records to analyze")

    analyses: list[ImageAnalysis] = []
    mean_tests: list[TTestResult] = []
    for i, record in enumerate(records):
        stem = f"{i:04d}_{Path(record.image_path).stem}"
        try:
            canvas = prepare_canvas(load_word_image(manifest.resolve(record)))
        except Exception as err:
            analyses.append(ImageAnalysis(record, CorrelationMap(np.full((8, 8), np.nan), N_PAIRS), None, None, None, error=f"unreadable: {err}"))
            continue
        corr_map = patch_correlation_map(model, canvas)
        _write_matrix(out_dir / f"{stem}_correlation_map.tsv", corr_map.rho)
        values = corr_map.off_diagonal_values()

        entry = ImageAnalysis(record, corr_map, None, None, None)
        try:
            entry.mean_test = left_tailed_t_test(values, rho0=rho0, alpha=alpha)
            mean_tests.append(entry.mean_test)
        except (ValueError, DegenerateSampleError) as err:
            entry.error = str(err)
        try:
            t_map, p_map = pairwise_test_maps(corr_map, rho0=rho0)
            _write_matrix(out_dir / f"{stem}_t_map.tsv", t_map)
            _write_matrix(out_dir / f"{stem}_p_map.tsv", p_map)
            finite_p = p_map[np.isfinite(p_map)]
            entry.pairs_rejected_raw = int((finite_p < alpha).sum())
            entry.pairs_rejected_bonferroni = int((finite_p < alpha / N_PAIRS).sum())
        except DegenerateSampleError:
            pass
        try:
            kde = kde_density(values)
            _write_points(
                out_dir / f"{stem}_kde.tsv",
                np.column_stack([kde.grid, kde.density]),
                header=f"value\tdensity\t# bandwidth={kde.bandwidth!r}",
            )
        except (ValueError, DegenerateSampleError):
            pass
        if values.size >= 3:
            diag = normality_diagnostics(values)
            _write_points(out_dir / f"{stem}_ecdf.tsv", diag.ecdf, header="value\tecdf")
            _write_points(out_dir / f"{stem}_qq.tsv", diag.qq, header="normal_quantile\tsample_quantile")
        analyses.append(entry)

    adjusted = bonferroni_adjust(mean_tests, alpha=alpha) if mean_tests else []
    summary = {
        "rho0": rho0,
        "alpha": alpha,
        "n_images": len(records),
        "n_tested": len(mean_tests),
        "mean_test": {
            "bonferroni_alpha": alpha / len(mean_tests) if mean_tests else None,
            "rejected_raw": sum(r.reject_null for r in mean_tests),
            "retained_raw": sum(not r.reject_null for r in mean_tests),
            "rejected_bonferroni": sum(r.reject_null for r in adjusted),
            "retained_bonferroni": sum(not r.reject_null for r in adjusted),
        },
        "pair_tests": {
            "pairs_per_image": N_PAIRS,
            "bonferroni_alpha": alpha / N_PAIRS,
            "rejected_raw": sum(a.pairs_rejected_raw or 0 for a in analyses),
            "rejected_bonferroni": sum(a.pairs_rejected_bonferroni or 0 for a in analyses),
        },
        "images": [
            {
                "image_path": a.record.image_path,
                "writer_id": a.record.writer_id,
                "n_undefined_pairs": a.corr_map.n_undefined,
                "mean_test": a.mean_test.as_dict() if a.mean_test else None,
                "pairs_rejected_raw": a.pairs_rejected_raw,
                "pairs_rejected_bonferroni": a.pairs_rejected_bonferroni,
                "error": a.error,
            }
            for a in analyses
        ],
    }
    with (out_dir / "summary.json").open("w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2)
    return summary
