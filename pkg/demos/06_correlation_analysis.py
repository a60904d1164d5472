"""Probe what the encoder learned with statistics: patch correlation maps,
one-sample t-tests with a Bonferroni correction, KDE, and normality plots.

Run with:  python3 demos/06_correlation_analysis.py
"""

import json
import tempfile
from pathlib import Path

import numpy as np

from swisd.analysis import (
    analyze_images,
    bonferroni_adjust,
    kde_density,
    left_tailed_t_test,
    normality_diagnostics,
    patch_correlation_map,
    silverman_bandwidth,
    student_t_cdf,
)
from swisd.data import CanvasStore
from swisd.encoder import EncoderConfig
from swisd.manifest import make_fragnet_splits, parse_manifest
from swisd.pretrain import PretrainConfig, run_pretraining
from swisd.synthetic import generate_dataset


def banner(title: str) -> None:
    print(f"\n=== {title} ===")


def main() -> None:
    rng = np.random.default_rng(6)

    banner("1. the t distribution, by hand")
    print(f"CDF at t=0, dof=27:   {student_t_cdf(0.0, 27):.6f} (exactly one half)")
    print(f"CDF at t=-2, dof=27:  {student_t_cdf(-2.0, 27):.6f}")
    print(f"CDF at t=+2, dof=27:  {student_t_cdf(2.0, 27):.6f} (symmetric)")

    banner("2. a left-tailed test against rho0 = 0.8")
    strong = rng.normal(0.82, 0.05, size=28)  # correlations near the null
    weak = rng.normal(0.55, 0.10, size=28)  # clearly below it
    for name, sample in (("strong", strong), ("weak", weak)):
        r = left_tailed_t_test(sample, rho0=0.8, alpha=0.05)
        print(f"{name:>7}: mean={r.sample_mean:.3f} t={r.t_statistic:+.2f} "
              f"p={r.p_value:.2e} dof={r.dof} reject={r.reject_null}")
    print("rejecting means the mean correlation sits significantly BELOW 0.8.")

    banner("3. Bonferroni over a family of tests")
    family = [left_tailed_t_test(rng.normal(m, 0.08, 28), rho0=0.8)
              for m in (0.55, 0.72, 0.76, 0.79, 0.83)]
    adjusted = bonferroni_adjust(family, alpha=0.05)
    print(f"family of {len(adjusted)} tests, per-test alpha becomes "
          f"{adjusted[0].bonferroni_alpha:.4f}")
    raw = sum(r.p_value < 0.05 for r in family)
    kept = sum(r.reject_null for r in adjusted)
    print(f"rejections: {raw} raw -> {kept} after correction")

    banner("4. KDE with the Silverman bandwidth")
    values = np.concatenate([rng.normal(0.3, 0.05, 150), rng.normal(0.7, 0.08, 100)])
    print(f"silverman bandwidth: {silverman_bandwidth(values):.4f}")
    curve = kde_density(values)
    area = float(np.trapezoid(curve.density, curve.grid))
    print(f"grid of {curve.grid.size} points spanning "
          f"[{curve.grid[0]:.3f}, {curve.grid[-1]:.3f}] "
          f"(data range plus 3 bandwidths each side)")
    print(f"density integrates to {area:.4f}")
    peaks = curve.grid[np.argsort(curve.density)[-1]]
    print(f"highest mode near {peaks:.2f} (the 150-sample component)")

    banner("5. ECDF and Q-Q coordinates")
    diag = normality_diagnostics(values)
    lo, hi = diag.ecdf[0], diag.ecdf[-1]
    print(f"ecdf: {diag.ecdf.shape[0]} (value, F(value)) rows, "
          f"first ({lo[0]:.3f}, {lo[1]:.3f}), last ({hi[0]:.3f}, {hi[1]:.3f})")
    qq_corr = float(np.corrcoef(diag.qq[:, 0], diag.qq[:, 1])[0, 1])
    print(f"qq: straightness correlation {qq_corr:.3f} "
          f"(a bimodal sample bends away from 1.0)")

    banner("6. patch correlation map from a trained encoder")
    root = Path(tempfile.mkdtemp(prefix="swisd-demo06-"))
    manifest_path = generate_dataset(
        root, num_writers=3, pages_per_writer=4, words_per_page=8, seed=33
    )
    manifest = make_fragnet_splits(parse_manifest(manifest_path, "CVL"), seed=0)
    encoder_config = EncoderConfig(
        arch="small_cnn", feature_dim=32, projector_hidden=32,
        small_cnn_channels=(8, 16, 24),
    )
    result = run_pretraining(
        manifest,
        PretrainConfig(epochs=6, base_lr=3e-3, warmup_epochs=1, batch_size=32,
                       checkpoint_interval=0),
        encoder_config,
        root / "pretrain",
        seed=42,
    )
    store = CanvasStore(manifest, manifest.subset("test"))
    corr = patch_correlation_map(result.checkpoint_path, store.canvas(0))
    print("8x8 Pearson matrix between the 8 patch embeddings of one word:")
    print(np.array2string(corr.rho, precision=2, suppress_small=True))
    print(f"undefined pairs (constant embeddings): {corr.n_undefined}")

    banner("7. the full per-image pipeline")
    out_dir = root / "analysis"
    summary = analyze_images(
        result.checkpoint_path, manifest, out_dir, rho0=0.8, alpha=0.05, max_images=3
    )
    print(f"analyzed {summary['n_tested']}/{summary['n_images']} images "
          f"against rho0={summary['rho0']}")
    mean_test = summary["mean_test"]
    print(f"mean-correlation tests: {mean_test['rejected_bonferroni']} rejected / "
          f"{mean_test['retained_bonferroni']} retained after Bonferroni")
    pair = summary["pair_tests"]
    print(f"pairwise tests: {pair['pairs_per_image']} per image, "
          f"{pair['rejected_bonferroni']} rejected in total")
    files = sorted(p.name for p in out_dir.glob("0000_*"))
    print("per-image outputs (first image):")
    for name in files:
        print(f"  {name}")
    print(f"plus {out_dir / 'summary.json'}")
    with open(out_dir / "summary.json") as fh:
        assert json.load(fh)["rho0"] == 0.8


if __name__ == "__main__":
    main()
