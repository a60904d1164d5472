"""Patch-correlation statistics: Pearson maps, t-tests, KDE, normality plots.

The Student-t CDF reference values below were generated once with mpmath at 50
decimal digits via the regularized incomplete beta function and are frozen
here so the runtime implementation is checked against an independent
arbitrary-precision source.
"""

import dataclasses
import json
import math
from pathlib import Path

import numpy as np
import pytest
import torch
from scipy import special

from swisd.analysis import (
    DEFAULT_ALPHA,
    DEFAULT_RHO0,
    N_PAIRS,
    CorrelationMap,
    DegenerateSampleError,
    TTestResult,
    analyze_images,
    bonferroni_adjust,
    kde_density,
    left_tailed_t_test,
    normality_diagnostics,
    pairwise_test_maps,
    patch_correlation_map,
    patch_embeddings,
    pearson_correlation_matrix,
    silverman_bandwidth,
    student_t_cdf,
)
from swisd.encoder import build_encoder, save_pretrain_checkpoint

# (t, P[T_27 <= t]) reference pairs, mpmath dps=50.
T_CDF_DOF27 = [
    (0.0, 0.5),
    (-1.0, 0.16309445033986347),
    (1.0, 0.8369055496601365),
    (-0.5, 0.31056293188162554),
    (0.5, 0.6894370681183745),
    (-2.0, 0.027826213664018863),
    (2.0, 0.9721737863359812),
    (-3.0, 0.0028728563213428764),
    (3.0, 0.9971271436786571),
    (-4.5, 5.834470801261991e-05),
    (4.5, 0.9999416552919874),
    (-0.1, 0.4605415784686171),
    (0.1, 0.5394584215313829),
    (-1.5, 0.07260904439249853),
    (2.75, 0.9947481501540051),
    (-2.052830493310848, 0.02494806522402517),
    (-6.0, 1.0578252821319521e-06),
    (0.25, 0.5977601228501508),
    (-0.75, 0.22987032723971831),
    (10.0, 0.9999999999290078),
]


def pearson_oracle(x):
    """Entrywise Pearson correlation via explicit loops."""
    x = np.asarray(x, float)
    k = x.shape[0]
    rho = np.ones((k, k))
    for i in range(k):
        for j in range(k):
            ci = x[i] - x[i].mean()
            cj = x[j] - x[j].mean()
            rho[i, j] = (ci * cj).sum() / math.sqrt((ci**2).sum() * (cj**2).sum())
    return rho


def ttest_result(p_value, **overrides):
    base = dict(
        t_statistic=-1.0, dof=27, p_value=p_value, n=28,
        sample_mean=0.1, sample_std=0.2, reject_null=p_value < DEFAULT_ALPHA,
    )
    base.update(overrides)
    return TTestResult(**base)


class TestPearsonMatrix:
    def test_matches_loop_oracle(self, rng):
        x = rng.standard_normal((8, 16))
        rho, n_undefined = pearson_correlation_matrix(x)
        np.testing.assert_allclose(rho, pearson_oracle(x), rtol=1e-12, atol=1e-14)
        assert n_undefined == 0

    def test_diagonal_exactly_one(self, rng):
        rho, _ = pearson_correlation_matrix(rng.standard_normal((5, 7)))
        np.testing.assert_array_equal(np.diagonal(rho), np.ones(5))

    def test_symmetric_and_bounded(self, rng):
        rho, _ = pearson_correlation_matrix(rng.standard_normal((8, 4)) * 1e6)
        np.testing.assert_allclose(rho, rho.T, atol=1e-13)
        assert np.nanmax(rho) <= 1.0 and np.nanmin(rho) >= -1.0

    def test_duplicate_rows_correlate_to_one(self, rng):
        row = rng.standard_normal(10)
        rho, _ = pearson_correlation_matrix(np.stack([row, row, -row]))
        assert rho[0, 1] == pytest.approx(1.0, abs=1e-12)
        assert rho[0, 2] == pytest.approx(-1.0, abs=1e-12)

    def test_constant_row_yields_nan_pairs(self, rng):
        x = rng.standard_normal((8, 6))
        x[2] = 3.14
        rho, n_undefined = pearson_correlation_matrix(x)
        assert n_undefined == 7
        assert np.isnan(rho[2, 0]) and np.isnan(rho[0, 2])
        assert rho[2, 2] == 1.0

    def test_undersized_inputs_rejected(self):
        with pytest.raises(ValueError, match="k, d >= 2"):
            pearson_correlation_matrix(np.zeros((1, 5)))
        with pytest.raises(ValueError, match="k, d >= 2"):
            pearson_correlation_matrix(np.zeros((5, 1)))

    def test_off_diagonal_values_count(self, rng):
        rho, _ = pearson_correlation_matrix(rng.standard_normal((8, 12)))
        values = CorrelationMap(rho, 0).off_diagonal_values()
        assert values.shape == (N_PAIRS,)
        x = rng.standard_normal((8, 12))
        x[0] = 0.0
        rho2, n_undef = pearson_correlation_matrix(x)
        assert CorrelationMap(rho2, n_undef).off_diagonal_values().shape == (N_PAIRS - 7,)


class TestPatchEmbeddings:
    def test_shapes_and_map(self, tiny_encoder_config, rng):
        torch.manual_seed(0)
        model = build_encoder(tiny_encoder_config)
        canvas = rng.integers(0, 256, size=(64, 128, 3)).astype(np.uint8)
        emb = patch_embeddings(model, canvas)
        assert emb.shape == (8, tiny_encoder_config.feature_dim)
        assert emb.dtype == np.float64
        cmap = patch_correlation_map(model, canvas)
        assert cmap.rho.shape == (8, 8)
        np.testing.assert_array_equal(np.diagonal(cmap.rho), np.ones(8))

    def test_checkpoint_path_accepted(self, tiny_encoder_config, tmp_path, rng):
        torch.manual_seed(1)
        model = build_encoder(tiny_encoder_config)
        path = save_pretrain_checkpoint(tmp_path / "ck.pt", model, tiny_encoder_config)
        canvas = rng.integers(0, 256, size=(64, 128, 3)).astype(np.uint8)
        model.eval()
        direct = patch_correlation_map(model, canvas)
        via_path = patch_correlation_map(path, canvas)
        np.testing.assert_allclose(via_path.rho, direct.rho, atol=1e-12)

    def test_embeddings_are_pre_pooling(self, tiny_encoder_config, rng):
        # The 8 rows must differ from each other; a pooled output could not.
        torch.manual_seed(2)
        model = build_encoder(tiny_encoder_config)
        canvas = rng.integers(0, 256, size=(64, 128, 3)).astype(np.uint8)
        emb = patch_embeddings(model, canvas)
        assert not np.allclose(emb, emb[0])


class TestStudentTCdf:
    @pytest.mark.parametrize("t,expected", T_CDF_DOF27)
    def test_frozen_mpmath_reference(self, t, expected):
        assert student_t_cdf(t, 27) == pytest.approx(expected, rel=1e-9, abs=1e-15)

    def test_scipy_cross_check(self):
        for t in np.linspace(-8, 8, 33):
            for dof in (1, 2, 5, 27, 100):
                assert student_t_cdf(float(t), dof) == pytest.approx(
                    float(special.stdtr(dof, t)), rel=1e-10, abs=1e-14
                )

    def test_zero_is_exactly_half(self):
        assert student_t_cdf(0.0, 27) == 0.5

    def test_cauchy_closed_form(self):
        # dof=1: CDF(t) = 1/2 + arctan(t)/pi
        assert student_t_cdf(1.0, 1) == pytest.approx(0.75, rel=1e-12)
        assert student_t_cdf(-1.0, 1) == pytest.approx(0.25, rel=1e-12)

    def test_complement_symmetry(self):
        for t in (0.3, 1.7, 4.2):
            assert student_t_cdf(t, 9) + student_t_cdf(-t, 9) == pytest.approx(1.0, abs=1e-14)

    def test_monotone_in_t(self):
        grid = np.linspace(-5, 5, 41)
        values = [student_t_cdf(float(t), 12) for t in grid]
        assert all(b > a for a, b in zip(values, values[1:]))

    def test_edge_inputs(self):
        assert math.isnan(student_t_cdf(float("nan"), 5))
        assert student_t_cdf(float("-inf"), 5) == 0.0
        assert student_t_cdf(float("inf"), 5) == 1.0
        with pytest.raises(ValueError, match="dof"):
            student_t_cdf(1.0, 0)


class TestLeftTailedTTest:
    def test_two_point_hand_example(self):
        # mean 0.6, unbiased std sqrt(0.02): t = (0.6-0.8)/(std/sqrt(2)) = -2
        result = left_tailed_t_test([0.5, 0.7], rho0=0.8)
        assert result.t_statistic == pytest.approx(-2.0, rel=1e-12)
        assert result.dof == 1
        assert result.n == 2
        # Cauchy left tail at -2: 1/2 + arctan(-2)/pi
        assert result.p_value == pytest.approx(0.14758361765043326, rel=1e-10)
        assert not result.reject_null

    def test_mean_equal_to_rho0_gives_half(self, rng):
        noise = rng.standard_normal(16) * 0.01
        values = 0.8 + noise - noise.mean()
        result = left_tailed_t_test(values, rho0=0.8)
        assert result.t_statistic == pytest.approx(0.0, abs=1e-10)
        assert result.p_value == pytest.approx(0.5, abs=1e-9)

    def test_strongly_decorrelated_sample_rejects(self, rng):
        values = rng.uniform(-0.1, 0.1, size=28)
        result = left_tailed_t_test(values, rho0=0.8)
        assert result.dof == 27
        assert result.p_value < 1e-6
        assert result.reject_null

    def test_uses_unbiased_std(self, rng):
        values = rng.uniform(0.0, 0.5, size=10)
        result = left_tailed_t_test(values)
        expected_t = (values.mean() - 0.8) / (values.std(ddof=1) / math.sqrt(10))
        assert result.t_statistic == pytest.approx(expected_t, rel=1e-12)
        assert result.sample_std == pytest.approx(values.std(ddof=1), rel=1e-12)

    def test_permutation_invariant(self, rng):
        values = rng.uniform(-1, 1, size=12)
        a = left_tailed_t_test(values)
        b = left_tailed_t_test(values[rng.permutation(12)])
        assert a.p_value == pytest.approx(b.p_value, rel=1e-12)

    def test_monotone_in_sample_mean(self, rng):
        base = rng.uniform(0.2, 0.6, size=20)
        p_low = left_tailed_t_test(base - 0.3).p_value
        p_high = left_tailed_t_test(base).p_value
        assert p_low < p_high

    def test_degenerate_sample(self):
        with pytest.raises(DegenerateSampleError):
            left_tailed_t_test([0.4] * 5)

    def test_too_few_values(self):
        with pytest.raises(ValueError, match="at least 2"):
            left_tailed_t_test([0.4])

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError, match="finite"):
            left_tailed_t_test([0.1, np.nan, 0.3])

    def test_defaults_recorded(self):
        result = left_tailed_t_test([0.1, 0.2, 0.3])
        assert result.rho0 == DEFAULT_RHO0
        assert result.alpha == DEFAULT_ALPHA
        assert result.bonferroni_alpha == DEFAULT_ALPHA
        assert set(result.as_dict()) == {
            "t_statistic", "dof", "p_value", "n", "sample_mean", "sample_std",
            "rho0", "alpha", "bonferroni_alpha", "reject_null",
        }


class TestBonferroni:
    def test_threshold_is_alpha_over_m(self):
        results = [ttest_result(p) for p in (0.001, 0.02, 0.04, 0.6)]
        adjusted = bonferroni_adjust(results, alpha=0.05)
        assert all(r.bonferroni_alpha == pytest.approx(0.0125) for r in adjusted)
        assert [r.reject_null for r in adjusted] == [True, False, False, False]

    def test_adjustment_never_turns_rejection_on(self):
        results = [ttest_result(p) for p in (0.04, 0.2, 0.9)]
        assert [r.reject_null for r in results] == [True, False, False]
        adjusted = bonferroni_adjust(results, alpha=0.05)
        for before, after in zip(results, adjusted):
            assert not (after.reject_null and not before.reject_null)

    def test_single_test_unchanged_threshold(self):
        (adjusted,) = bonferroni_adjust([ttest_result(0.03)], alpha=0.05)
        assert adjusted.bonferroni_alpha == 0.05
        assert adjusted.reject_null

    def test_originals_not_mutated(self):
        original = ttest_result(0.04)
        bonferroni_adjust([original, ttest_result(0.5)], alpha=0.05)
        assert original.reject_null
        assert original.bonferroni_alpha == DEFAULT_ALPHA

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            bonferroni_adjust([])


class TestPairwiseMaps:
    def test_shared_scale_and_nan_diagonal(self, rng):
        rho, n_undef = pearson_correlation_matrix(rng.standard_normal((8, 20)))
        cmap = CorrelationMap(rho, n_undef)
        t_map, p_map = pairwise_test_maps(cmap, rho0=0.8)
        values = cmap.off_diagonal_values()
        se = values.std(ddof=1) / math.sqrt(values.size)
        assert np.isnan(np.diagonal(t_map)).all()
        assert np.isnan(np.diagonal(p_map)).all()
        i, j = 2, 5
        assert t_map[i, j] == pytest.approx((rho[i, j] - 0.8) / se, rel=1e-12)
        assert p_map[i, j] == pytest.approx(
            student_t_cdf(t_map[i, j], values.size - 1), rel=1e-12
        )

    def test_degenerate_spread(self):
        rho = np.full((8, 8), 0.3)
        np.fill_diagonal(rho, 1.0)
        with pytest.raises(DegenerateSampleError):
            pairwise_test_maps(CorrelationMap(rho, 0))


class TestSilverman:
    def test_frozen_value_for_arange(self):
        # std(ddof=1) < IQR/1.34 for 0..9, so the std branch is taken
        assert silverman_bandwidth(np.arange(10.0)) == pytest.approx(
            1.719286404692283, rel=1e-12
        )

    def test_iqr_branch(self, rng):
        # Heavy tails: IQR/1.34 < std, so the IQR branch is taken
        v = np.concatenate([rng.uniform(-0.5, 0.5, 50), [50.0, -50.0]])
        q75, q25 = np.percentile(v, [75, 25])
        expected = 0.9 * ((q75 - q25) / 1.34) * v.size ** (-0.2)
        assert silverman_bandwidth(v) == pytest.approx(expected, rel=1e-12)

    def test_zero_iqr_falls_back_to_std(self):
        v = np.array([0.0] * 6 + [1.0])
        assert silverman_bandwidth(v) == pytest.approx(
            0.9 * v.std(ddof=1) * 7 ** (-0.2), rel=1e-12
        )

    def test_zero_spread_rejected(self):
        with pytest.raises(DegenerateSampleError):
            silverman_bandwidth(np.ones(5))


class TestKde:
    def test_pointwise_gaussian_mixture_oracle(self, rng):
        v = rng.standard_normal(6)
        curve = kde_density(v, num_points=64)
        h = curve.bandwidth
        for g, d in zip(curve.grid[::7], curve.density[::7]):
            expected = sum(
                math.exp(-0.5 * ((g - x) / h) ** 2) for x in v
            ) / (len(v) * h * math.sqrt(2 * math.pi))
            assert d == pytest.approx(expected, rel=1e-12)

    def test_grid_spans_three_bandwidths(self, rng):
        v = rng.uniform(-1, 1, 20)
        curve = kde_density(v, num_points=128)
        assert curve.grid[0] == pytest.approx(v.min() - 3 * curve.bandwidth, rel=1e-12)
        assert curve.grid[-1] == pytest.approx(v.max() + 3 * curve.bandwidth, rel=1e-12)
        assert len(curve.grid) == len(curve.density) == 128

    def test_area_close_to_one(self, rng):
        curve = kde_density(rng.standard_normal(200))
        assert curve.area() == pytest.approx(1.0, abs=5e-3)

    def test_symmetric_sample_symmetric_density(self):
        curve = kde_density([-2.0, -1.0, 1.0, 2.0], num_points=101)
        np.testing.assert_allclose(curve.density, curve.density[::-1], rtol=1e-12)

    def test_mode_near_cluster(self):
        curve = kde_density([0.0, 0.1, -0.1, 0.05, 5.0], num_points=512)
        assert abs(curve.grid[np.argmax(curve.density)]) < 0.5

    def test_bandwidth_override(self, rng):
        curve = kde_density(rng.standard_normal(10), bandwidth=0.5)
        assert curve.bandwidth == 0.5

    def test_error_cases(self, rng):
        with pytest.raises(ValueError, match="at least 2"):
            kde_density([1.0])
        with pytest.raises(DegenerateSampleError):
            kde_density([2.0, 2.0, 2.0])
        with pytest.raises(ValueError, match="finite"):
            kde_density([0.0, np.inf])
        with pytest.raises(ValueError, match="bandwidth"):
            kde_density(rng.standard_normal(5), bandwidth=0.0)


class TestNormalityDiagnostics:
    def test_three_point_example(self):
        diag = normality_diagnostics([3.0, 1.0, 2.0])
        np.testing.assert_allclose(
            diag.ecdf, [[1.0, 1 / 3], [2.0, 2 / 3], [3.0, 1.0]], rtol=1e-15
        )
        np.testing.assert_allclose(diag.qq[:, 1], [1.0, 2.0, 3.0])
        expected_quantiles = special.ndtri((np.arange(1, 4) - 0.5) / 3)
        np.testing.assert_allclose(diag.qq[:, 0], expected_quantiles, rtol=1e-12)
        assert diag.qq[1, 0] == 0.0  # median quantile

    def test_translation_moves_values_not_probabilities(self, rng):
        v = rng.standard_normal(9)
        a = normality_diagnostics(v)
        b = normality_diagnostics(v + 10)
        np.testing.assert_allclose(b.ecdf[:, 0], a.ecdf[:, 0] + 10, rtol=1e-12)
        np.testing.assert_array_equal(b.ecdf[:, 1], a.ecdf[:, 1])
        np.testing.assert_array_equal(b.qq[:, 0], a.qq[:, 0])

    def test_normal_sample_tracks_diagonal(self, rng):
        v = rng.standard_normal(500)
        diag = normality_diagnostics(v)
        corr = np.corrcoef(diag.qq[:, 0], diag.qq[:, 1])[0, 1]
        assert corr > 0.99

    def test_too_small(self):
        with pytest.raises(ValueError, match="at least 3"):
            normality_diagnostics([1.0, 2.0])


@pytest.fixture(scope="module")
def outputs(tiny_encoder_config, split_manifest, tmp_path_factory):
    torch.manual_seed(3)
    model = build_encoder(tiny_encoder_config)
    out = tmp_path_factory.mktemp("analysis")
    records = split_manifest.subset("test")[:3]
    summary = analyze_images(model, split_manifest, out, records=records)
    return out, summary, records


@pytest.mark.slow
class TestAnalyzeImages:
    def test_per_image_files(self, outputs):
        out, _, records = outputs
        for i, record in enumerate(records):
            stem = f"{i:04d}_{Path(record.image_path).stem}"
            for suffix in ("correlation_map", "t_map", "p_map", "kde", "ecdf", "qq"):
                assert (out / f"{stem}_{suffix}.tsv").exists(), suffix
        rho = np.loadtxt(out / f"0000_{Path(records[0].image_path).stem}_correlation_map.tsv")
        assert rho.shape == (8, 8)
        np.testing.assert_allclose(np.diagonal(rho), 1.0)

    def test_summary_contents(self, outputs):
        out, summary, records = outputs
        assert summary["n_images"] == 3
        assert summary["n_tested"] == 3
        assert summary["pair_tests"]["pairs_per_image"] == 28
        assert summary["pair_tests"]["bonferroni_alpha"] == pytest.approx(0.05 / 28)
        assert summary["mean_test"]["bonferroni_alpha"] == pytest.approx(0.05 / 3)
        mt = summary["mean_test"]
        assert mt["rejected_raw"] + mt["retained_raw"] == 3
        assert mt["rejected_bonferroni"] + mt["retained_bonferroni"] == 3
        assert mt["rejected_bonferroni"] <= mt["rejected_raw"]
        assert len(summary["images"]) == 3
        for entry in summary["images"]:
            assert entry["mean_test"]["rho0"] == DEFAULT_RHO0
            assert entry["error"] is None

    def test_summary_json_round_trip(self, outputs):
        out, summary, _ = outputs
        on_disk = json.loads((out / "summary.json").read_text())
        assert on_disk == summary

    def test_kde_header_records_bandwidth(self, outputs):
        out, _, records = outputs
        stem = f"0000_{Path(records[0].image_path).stem}"
        first = (out / f"{stem}_kde.tsv").read_text().splitlines()[0]
        assert first.startswith("value\tdensity")
        assert "bandwidth=" in first

    def test_unreadable_record_reported(
        self, tiny_encoder_config, split_manifest, tmp_path
    ):
        torch.manual_seed(4)
        model = build_encoder(tiny_encoder_config)
        records = list(split_manifest.subset("test")[:1])
        records.append(dataclasses.replace(records[0], image_path="missing.png"))
        summary = analyze_images(model, split_manifest, tmp_path, records=records)
        assert summary["n_images"] == 2
        assert summary["n_tested"] == 1
        bad = summary["images"][1]
        assert bad["error"].startswith("unreadable")
        assert bad["mean_test"] is None
        assert bad["n_undefined_pairs"] == 28

    def test_max_images_truncates(self, tiny_encoder_config, split_manifest, tmp_path):
        torch.manual_seed(5)
        model = build_encoder(tiny_encoder_config)
        summary = analyze_images(model, split_manifest, tmp_path, max_images=2)
        assert summary["n_images"] == 2

    def test_no_records_rejected(self, tiny_encoder_config, split_manifest, tmp_path):
        model = build_encoder(tiny_encoder_config)
        with pytest.raises(ValueError, match="no records"):
            analyze_images(model, split_manifest, tmp_path, records=[])
