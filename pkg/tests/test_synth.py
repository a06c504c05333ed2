import numpy as np
import pytest
from scipy import stats

from copulastream import (
    ColumnKind,
    ConfigError,
    SynthConfig,
    generate_stream,
    mask_mnar,
    random_correlation,
)


class TestRandomCorrelation:
    def test_one_dimensional(self):
        assert np.array_equal(random_correlation(1, seed=0), np.array([[1.0]]))

    def test_valid_correlation_properties(self):
        for seed in range(5):
            C = random_correlation(8, seed=seed)
            assert np.array_equal(np.diagonal(C), np.ones(8))
            assert np.array_equal(C, C.T)
            assert np.linalg.eigvalsh(C)[0] > 0

    def test_distinct_seeds_differ(self):
        a = random_correlation(5, seed=1)
        b = random_correlation(5, seed=2)
        assert np.linalg.norm(a - b) > 0

    def test_same_seed_reproduces(self):
        assert np.array_equal(random_correlation(5, seed=3), random_correlation(5, seed=3))


class TestGenerateStream:
    def test_default_shape_and_labels(self):
        stream = generate_stream(SynthConfig(seed=0))
        assert stream.data.shape == (6000, 15)
        assert stream.truth.shape == (6000, 15)
        # segments switch exactly at the configured boundaries
        assert SynthConfig(seed=0).change_points == (2000, 4000)
        assert stream.labels[1999] == 0 and stream.labels[2000] == 1
        assert stream.labels[3999] == 1 and stream.labels[4000] == 2

    def test_mcar_mask_rate(self):
        stream = generate_stream(SynthConfig(seed=1))
        assert abs(stream.mask.mean() - 0.4) < 0.01

    def test_continuous_mean_matches_exponential(self):
        cfg = SynthConfig(n_per_segment=10_000, n_segments=1, seed=2)
        stream = generate_stream(cfg)
        observed = stream.truth[~stream.mask[:, 0], 0]
        assert observed.mean() == pytest.approx(3.0, abs=0.15)
        assert observed.min() >= 0.0

    def test_ordinal_and_binary_levels(self):
        stream = generate_stream(SynthConfig(n_per_segment=500, n_segments=1, seed=3))
        for j, kind in enumerate(stream.kinds):
            if kind.is_continuous:
                continue
            values = set(np.unique(stream.truth[:, j]))
            assert values <= set(kind.level_values().astype(float))

    def test_bit_reproducible(self):
        cfg = SynthConfig(n_per_segment=300, n_segments=2, seed=9)
        a = generate_stream(cfg)
        b = generate_stream(cfg)
        assert np.array_equal(a.truth, b.truth)
        assert np.array_equal(a.mask, b.mask)
        assert np.array_equal(a.data, b.data, equal_nan=True)

    def test_marginals_invariant_across_segments(self):
        # only the correlation changes; pooled continuous values pass a KS check
        stream = generate_stream(SynthConfig(seed=4))
        for j in range(5):
            seg1 = stream.truth[stream.labels == 0, j]
            seg2 = stream.truth[stream.labels == 1, j]
            assert stats.ks_2samp(seg1, seg2).pvalue >= 0.01

    def test_sigma_changes_across_segments(self):
        stream = generate_stream(SynthConfig(n_per_segment=200, seed=5))
        assert np.linalg.norm(stream.sigmas[0] - stream.sigmas[1]) > 0.5

    def test_mcar_mask_independent_of_values(self):
        cfg = SynthConfig(n_per_segment=7000, n_segments=1, seed=6)
        stream = generate_stream(cfg)
        col = stream.truth[:, 0]
        mask = stream.mask[:, 0]
        quartiles = np.quantile(col, [0.25, 0.5, 0.75])
        bins = np.digitize(col, quartiles)
        rates = [mask[bins == b].mean() for b in range(4)]
        assert max(rates) - min(rates) < 0.04

    def test_invalid_config_rejected(self):
        with pytest.raises(ConfigError):
            SynthConfig(missing_ratio=1.0)
        with pytest.raises(ConfigError):
            SynthConfig(p_cont=0)
        with pytest.raises(ConfigError):
            SynthConfig(mechanism="mar")


class TestMaskMnar:
    def test_all_ones_binary_rate(self):
        data = np.ones((10_000, 1))
        mask = mask_mnar(data, [ColumnKind.binary()], seed=0)
        assert mask.mean() == pytest.approx(0.20, abs=0.02)

    def test_all_zeros_binary_rate(self):
        data = np.zeros((10_000, 1))
        mask = mask_mnar(data, [ColumnKind.binary()], seed=1)
        assert mask.mean() == pytest.approx(0.60, abs=0.02)

    def test_middle_ordinal_rate(self):
        data = np.full((10_000, 1), 3.0)
        mask = mask_mnar(data, [ColumnKind.ordinal(5)], seed=2)
        assert mask.mean() == pytest.approx(0.40, abs=0.02)

    def test_ordinal_extreme_rates(self):
        rng = np.random.default_rng(3)
        data = rng.integers(1, 6, size=(40_000, 1)).astype(float)
        mask = mask_mnar(data, [ColumnKind.ordinal(5)], seed=3)
        high = mask[data[:, 0] >= 4].mean()
        low = mask[data[:, 0] <= 2].mean()
        assert high == pytest.approx(0.20, abs=0.02)
        assert low == pytest.approx(0.60, abs=0.02)

    def test_continuous_quantile_bands(self):
        rng = np.random.default_rng(4)
        data = rng.exponential(3.0, size=(40_000, 1))
        mask = mask_mnar(data, [ColumnKind.continuous()], seed=4)
        q25, q75 = np.quantile(data[:, 0], [0.25, 0.75])
        assert mask[data[:, 0] > q75].mean() == pytest.approx(0.20, abs=0.02)
        assert mask[data[:, 0] < q25].mean() == pytest.approx(0.60, abs=0.02)

    def test_constant_column_uses_middle_band(self):
        data = np.full((10_000, 1), 7.5)
        mask = mask_mnar(data, [ColumnKind.continuous()], seed=5)
        assert mask.mean() == pytest.approx(0.40, abs=0.02)

    def test_mnar_stream_generation(self):
        cfg = SynthConfig(n_per_segment=2000, n_segments=1, mechanism="mnar", seed=7)
        stream = generate_stream(cfg)
        # binary columns: ones should go missing far less often than zeros
        j = 10
        ones = stream.mask[stream.truth[:, j] == 1, j].mean()
        zeros = stream.mask[stream.truth[:, j] == 0, j].mean()
        assert ones < 0.3 < zeros
