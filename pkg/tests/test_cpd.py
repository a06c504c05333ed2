import math

import numpy as np
import pytest

from copulastream import (
    ColumnKind,
    ConstantSchedule,
    CopulaModel,
    DomainError,
    FdrState,
    NumericalError,
    OnlineEmState,
    SynthConfig,
    correlation_deviation,
    fdr_alpha,
    generate_stream,
    mc_cpd_test,
    online_cpd_loop,
    online_update,
    random_correlation,
    sample_gc_batch,
    sample_gc_row,
)
from copulastream.cpd import _SPEND_SCALE, _spend


def fitted_state(kinds_spec="mixed", p=4, seed=0, n=240, sigma=None, gamma=0.5):
    if kinds_spec == "mixed":
        kinds = [ColumnKind.continuous(), ColumnKind.continuous(), ColumnKind.ordinal(5), ColumnKind.binary()][:p]
    else:
        kinds = [ColumnKind.continuous()] * p
    cfg_sigma = sigma if sigma is not None else random_correlation(p, seed=seed + 1000)
    model = CopulaModel(kinds, window_size=200, sigma=np.eye(p))
    rng = np.random.default_rng(seed)
    L = np.linalg.cholesky(cfg_sigma)
    Z = rng.standard_normal((n, p)) @ L.T
    X = np.empty((n, p))
    for j, kind in enumerate(kinds):
        if kind.is_continuous:
            X[:, j] = np.exp(Z[:, j])
        else:
            levels = kind.level_values()
            cuts = np.linspace(-1, 1, kind.levels - 1)
            X[:, j] = levels[np.searchsorted(cuts, Z[:, j])]
    state = OnlineEmState(model, ConstantSchedule(gamma))
    for s in range(0, n, 40):
        online_update(state, X[s : s + 40])
    return state, X


class TestCorrelationDeviation:
    def test_identical_matrices_give_exact_zero(self):
        sigma = random_correlation(5, seed=3)
        assert correlation_deviation(sigma, sigma) == 0.0

    def test_identity_reference_is_frobenius_distance(self):
        tilde = random_correlation(4, seed=4)
        expected = float(np.linalg.norm(tilde - np.eye(4)))
        assert correlation_deviation(np.eye(4), tilde) == pytest.approx(expected, abs=1e-12)

    def test_two_by_two_hand_value(self):
        tilde = np.array([[1.0, 0.5], [0.5, 1.0]])
        assert correlation_deviation(np.eye(2), tilde) == pytest.approx(math.sqrt(0.5), abs=1e-12)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(5)
        a = random_correlation(5, seed=6)
        b = random_correlation(5, seed=7)
        perm = rng.permutation(5)
        d1 = correlation_deviation(a, b)
        d2 = correlation_deviation(a[np.ix_(perm, perm)], b[np.ix_(perm, perm)])
        assert d1 == pytest.approx(d2, abs=1e-9)

    def test_dimension_mismatch_rejected(self):
        with pytest.raises(DomainError):
            correlation_deviation(np.eye(2), np.eye(3))

    def test_singular_reference_rejected(self):
        near_singular = np.array([[1.0, 1.0], [1.0, 1.0]])
        with pytest.raises(NumericalError):
            correlation_deviation(near_singular, np.eye(2))


class TestSampling:
    def test_independent_continuous_latent_correlations(self):
        state, _ = fitted_state("continuous", p=3, seed=10, sigma=np.eye(3))
        model = state.model
        model.sigma = np.eye(3)
        rng = np.random.default_rng(11)
        X = sample_gc_batch(model, np.zeros((10_000, 3), dtype=bool), rng)
        lower, _, _ = model.batch_regions(X)
        corr = np.corrcoef(lower, rowvar=False)
        off = corr[~np.eye(3, dtype=bool)]
        assert np.max(np.abs(off)) < 0.03

    def test_empty_pattern_fully_observed(self):
        state, _ = fitted_state(p=4, seed=12)
        rng = np.random.default_rng(13)
        row = sample_gc_row(state.model, np.array([], dtype=int), rng)
        assert not np.isnan(row).any()

    def test_index_pattern_masks_requested_coordinates(self):
        state, _ = fitted_state(p=4, seed=14)
        rng = np.random.default_rng(15)
        row = sample_gc_row(state.model, np.array([1, 3]), rng)
        assert np.isnan(row[1]) and np.isnan(row[3])
        assert not np.isnan(row[0]) and not np.isnan(row[2])

    def test_ordinal_frequencies_match_window(self):
        state, _ = fitted_state(p=4, seed=16)
        model = state.model
        rng = np.random.default_rng(17)
        X = sample_gc_batch(model, np.zeros((10_000, 4), dtype=bool), rng)
        marginal = model.marginals[2]
        window = np.asarray(marginal.window)
        for lev in marginal.kind.level_values():
            expected = float(np.mean(window == lev))
            observed = float(np.mean(X[:, 2] == lev))
            assert abs(observed - expected) < 0.02

    def test_values_come_from_marginal_windows(self):
        state, _ = fitted_state(p=4, seed=18)
        rng = np.random.default_rng(19)
        X = sample_gc_batch(state.model, np.zeros((100, 4), dtype=bool), rng)
        for j in (0, 1):
            window = set(state.model.marginals[j].window)
            assert set(X[:, j]) <= window


class TestMcCpdTest:
    def test_pvalue_formula_recomputable(self):
        state, X = fitted_state(p=4, seed=20)
        result = mc_cpd_test(state, X[:40], B=19, seed=21)
        count = int(np.sum(result.statistic <= result.mc_statistics))
        assert result.p_value == (count + 1) / 20
        assert result.p_value >= 1 / 20
        assert len(result.mc_statistics) == 19

    def test_deterministic_with_fixed_seed(self):
        state, X = fitted_state(p=4, seed=22)
        a = mc_cpd_test(state, X[:40], B=11, seed=5)
        b = mc_cpd_test(state, X[:40], B=11, seed=5)
        assert a.statistic == b.statistic
        assert np.array_equal(a.mc_statistics, b.mc_statistics)
        assert a.p_value == b.p_value

    def test_strong_change_gives_minimum_pvalue(self):
        state, _ = fitted_state("continuous", p=3, seed=23, sigma=np.eye(3))
        rng = np.random.default_rng(24)
        changed = random_correlation(3, seed=25)
        L = np.linalg.cholesky(changed)
        z = rng.standard_normal((60, 3)) @ L.T
        batch = np.exp(z)
        result = mc_cpd_test(state, batch, B=9, seed=26)
        assert result.p_value == pytest.approx(1 / 10)
        biased = mc_cpd_test(state, batch, B=9, seed=26, biased=True)
        assert biased.p_value == 0.0
        assert biased.biased

    def test_does_not_mutate_caller_state(self):
        state, X = fitted_state(p=4, seed=27)
        sigma_before = state.model.sigma.copy()
        windows_before = [m.window for m in state.model.marginals]
        t_before = state.t
        mc_cpd_test(state, X[:40], B=5, seed=28)
        assert np.array_equal(state.model.sigma, sigma_before)
        assert [m.window for m in state.model.marginals] == windows_before
        assert state.t == t_before

    def test_workers_do_not_change_result(self):
        state, X = fitted_state(p=4, seed=29, n=120)
        a = mc_cpd_test(state, X[:40], B=8, seed=30, workers=1)
        b = mc_cpd_test(state, X[:40], B=8, seed=30, workers=2)
        assert a.statistic == b.statistic
        assert np.array_equal(a.mc_statistics, b.mc_statistics)


class TestFdrAlpha:
    def test_first_level_from_spend_sequence(self):
        state = FdrState(alpha=0.05)
        expected = 0.5 * 0.05 * _SPEND_SCALE  # w0 * gamma_1, gamma_1 = 6/pi^2
        assert fdr_alpha(state) == pytest.approx(expected, abs=1e-15)

    def test_spend_sequence_normalized(self):
        total = sum(_spend(k) for k in range(1, 200_000))
        assert total == pytest.approx(1.0, abs=1e-4)

    def test_level_positive_but_decaying_without_rejections(self):
        state = FdrState(alpha=0.05)
        state.decisions = [False] * 99
        level = fdr_alpha(state)
        assert level == pytest.approx(0.5 * 0.05 * _SPEND_SCALE / 100**2, abs=1e-18)
        assert level > 0

    def test_rejection_earns_wealth(self):
        quiet = FdrState(alpha=0.05)
        quiet.decisions = [False] * 10
        earned = FdrState(alpha=0.05)
        earned.decisions = [False] * 9 + [True]
        assert fdr_alpha(earned) > fdr_alpha(quiet)

    def test_recursion_hand_computed(self):
        # rejections at t=2 and t=5; level at t=7 from the documented rule
        state = FdrState(alpha=0.05)
        state.decisions = [False, True, False, False, True, False]
        w0 = 0.025
        expected = (
            w0 * _spend(7) + (0.05 - w0) * _spend(7 - 2) + 0.05 * _spend(7 - 5)
        )
        assert fdr_alpha(state) == pytest.approx(expected, abs=1e-15)

    def test_depends_only_on_history(self):
        a = FdrState(alpha=0.05)
        b = FdrState(alpha=0.05)
        for d in (False, True, False):
            a.record(d)
            b.record(d)
        assert fdr_alpha(a) == fdr_alpha(b)


class TestOnlineCpdLoop:
    def _two_segment_batches(self, seed=0, n_batches=10, batch=30):
        p = 4
        rng = np.random.default_rng(seed)
        s1 = np.eye(p)
        s2 = random_correlation(p, seed=seed + 1)
        batches = []
        for t in range(n_batches):
            sigma = s1 if t < n_batches // 2 else s2
            z = rng.standard_normal((batch, p)) @ np.linalg.cholesky(sigma).T
            batches.append(np.exp(z))
        return batches

    def test_warmup_batches_are_suppressed(self):
        batches = self._two_segment_batches(seed=1)
        model = CopulaModel([ColumnKind.continuous()] * 4, window_size=100)
        records = list(
            online_cpd_loop(batches, model, B=9, warmup=2, seed=2, biased=True)
        )
        assert [r.suppressed for r in records[:2]] == [True, True]
        assert all(math.isnan(r.p_value) for r in records[:2])
        assert all(not r.decision for r in records[:2])
        assert len(records) == len(batches)

    def test_burn_in_suppresses_after_detection(self):
        batches = self._two_segment_batches(seed=3)
        model = CopulaModel([ColumnKind.continuous()] * 4, window_size=100)
        records = list(
            online_cpd_loop(batches, model, B=19, warmup=2, burn_in=3, seed=4, biased=True)
        )
        detected = [r.t for r in records if r.decision]
        assert detected, "expected at least one detection on a strong change"
        first = detected[0]
        following = [r for r in records if first < r.t <= first + 3]
        assert all(r.suppressed and not r.decision for r in following)

    def test_low_alpha_warning_emitted_and_test_still_run(self):
        batches = self._two_segment_batches(seed=5, n_batches=4)
        model = CopulaModel([ColumnKind.continuous()] * 4, window_size=100)
        with pytest.warns(UserWarning, match="cannot reject"):
            records = list(online_cpd_loop(batches, model, B=9, warmup=1, seed=6))
        tested = [r for r in records if not r.suppressed]
        assert all(not math.isnan(r.p_value) for r in tested)
        assert any(r.low_alpha_warning for r in tested)

    def test_deterministic_across_runs(self):
        batches = self._two_segment_batches(seed=7)
        model = CopulaModel([ColumnKind.continuous()] * 4, window_size=100)
        r1 = list(online_cpd_loop(batches, model, B=9, warmup=1, seed=8, biased=True))
        r2 = list(online_cpd_loop(batches, model, B=9, warmup=1, seed=8, biased=True))
        assert [(r.t, r.statistic, r.p_value, r.alpha_t, r.decision) for r in r1] == [
            (r.t, r.statistic, r.p_value, r.alpha_t, r.decision) for r in r2
        ]

    def test_alpha_depends_only_on_decision_history(self):
        batches = self._two_segment_batches(seed=9)
        model = CopulaModel([ColumnKind.continuous()] * 4, window_size=100)
        records = list(online_cpd_loop(batches, model, B=9, warmup=1, seed=10, biased=True))
        state = FdrState(alpha=0.05)
        for r in records:
            if not r.suppressed:
                assert r.alpha_t == fdr_alpha(state)
            state.record(r.decision)
