import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cmrestore.data import Dataset
from cmrestore.errors import DimensionError, NumericError, UsageError
from cmrestore.nnet import Denoiser
from cmrestore.prior import PriorNet
from cmrestore.scorer import (RIDGE, FeatureProjector, GaussianSummary, extract_features,
                              fit_gaussian, frechet_distance, select_optimal_point)
from cmrestore.schedule import skip_coefficients


def random_summary(r, d):
    a = r.normal(size=(d, d))
    return GaussianSummary(r.normal(size=d), a @ a.T + 0.1 * np.eye(d))


class TestFeatures:
    def test_zero_patch(self):
        proj = FeatureProjector.create(16, 5, seed=0)
        f = extract_features(proj, np.zeros((1, 4, 4)))
        assert f.shape == (1, 7) and np.all(f == 0.0)

    def test_identical_rows(self, rng):
        proj = FeatureProjector.create(16, 5, seed=0)
        p = rng.normal(size=(4, 4))
        f = extract_features(proj, np.stack([p, p]))
        assert np.array_equal(f[0], f[1])

    def test_constant_shift_moves_mean_feature(self, rng):
        proj = FeatureProjector.create(16, 5, seed=0)
        p = rng.normal(size=(1, 4, 4))
        a, b = extract_features(proj, p), extract_features(proj, p + 0.37)
        assert b[0, 5] - a[0, 5] == pytest.approx(0.37, abs=1e-12)
        assert b[0, 6] == pytest.approx(a[0, 6], abs=1e-12)
        np.testing.assert_allclose(b[0, :5] - a[0, :5], 0.37 * proj.matrix.sum(axis=0), atol=1e-12)

    def test_projector_fixed_by_seed(self):
        a, b = FeatureProjector.create(256, seed=3), FeatureProjector.create(256, seed=3)
        assert np.array_equal(a.matrix, b.matrix) and a.feature_dim == 18
        with pytest.raises(ValueError):
            a.matrix[0, 0] = 1.0

    def test_errors(self):
        proj = FeatureProjector.create(16, 5)
        with pytest.raises(UsageError):
            extract_features(proj, np.zeros((0, 4, 4)))
        with pytest.raises(DimensionError):
            extract_features(proj, np.zeros((2, 3, 3)))


class TestFitGaussian:
    def test_constant_rows(self):
        g = fit_gaussian(np.tile([1.0, -2.0, 3.0], (10, 1)))
        np.testing.assert_array_equal(g.mean, [1.0, -2.0, 3.0])
        np.testing.assert_allclose(g.covariance, RIDGE * np.eye(3), atol=1e-18)

    def test_hand_arithmetic(self):
        g = fit_gaussian(np.array([[0.0, 0.0], [2.0, 0.0]]))
        np.testing.assert_array_equal(g.mean, [1.0, 0.0])
        np.testing.assert_allclose(g.covariance, np.diag([2.0, 0.0]) + RIDGE * np.eye(2), atol=1e-15)

    def test_monte_carlo(self):
        r = np.random.default_rng(0)
        mean = np.array([1.0, -2.0, 0.5])
        a = r.normal(size=(3, 3))
        cov = a @ a.T + np.eye(3)
        g = fit_gaussian(r.multivariate_normal(mean, cov, size=10000))
        assert np.all(np.abs(g.mean - mean) <= 0.05 * np.maximum(np.abs(mean), 1.0))
        assert np.all(np.abs(g.covariance - cov) <= 0.05 * np.sqrt(np.outer(np.diag(cov), np.diag(cov))))

    def test_symmetric_psd(self, rng):
        g = fit_gaussian(rng.normal(size=(5, 8)))
        assert np.max(np.abs(g.covariance - g.covariance.T)) <= 1e-12
        assert np.min(np.linalg.eigvalsh(g.covariance)) >= 0

    def test_too_few_rows(self):
        with pytest.raises(UsageError):
            fit_gaussian(np.zeros((1, 3)))


class TestFrechet:
    def test_identical(self, rng):
        g = random_summary(rng, 6)
        assert frechet_distance(g, g) <= 1e-8

    def test_mean_shift(self, rng):
        g = random_summary(rng, 6)
        delta = rng.normal(size=6)
        h = GaussianSummary(g.mean + delta, g.covariance)
        assert frechet_distance(g, h) == pytest.approx(float(delta @ delta), abs=1e-8)

    def test_one_dimensional_variances(self):
        a = GaussianSummary(np.zeros(1), np.array([[1.0]]))
        b = GaussianSummary(np.zeros(1), np.array([[4.0]]))
        assert frechet_distance(a, b) == pytest.approx(1.0, abs=1e-8)

    def test_commuting_closed_form(self, rng):
        va, vb = rng.uniform(0.1, 3, size=4), rng.uniform(0.1, 3, size=4)
        a = GaussianSummary(np.zeros(4), np.diag(va))
        b = GaussianSummary(np.ones(4), np.diag(vb))
        expected = 4.0 + np.sum((np.sqrt(va) - np.sqrt(vb)) ** 2)
        assert frechet_distance(a, b) == pytest.approx(expected, abs=1e-10)

    def test_matches_scipy_sqrtm(self, rng):
        from scipy.linalg import sqrtm
        a, b = random_summary(rng, 5), random_summary(rng, 5)
        ref = (np.sum((a.mean - b.mean) ** 2) + np.trace(a.covariance + b.covariance)
               - 2 * np.trace(sqrtm(a.covariance @ b.covariance).real))
        assert frechet_distance(a, b) == pytest.approx(ref, rel=1e-8)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 10))
    def test_symmetric_and_non_negative(self, seed, d):
        r = np.random.default_rng(seed)
        a, b = random_summary(r, d), random_summary(r, d)
        ab, ba = frechet_distance(a, b), frechet_distance(b, a)
        assert ab >= 0 and abs(ab - ba) <= 1e-9 * max(1.0, ab)
        assert frechet_distance(a, a) <= 1e-8 * max(1.0, np.trace(a.covariance))

    def test_errors(self):
        a = GaussianSummary(np.zeros(2), np.eye(2))
        with pytest.raises(DimensionError):
            frechet_distance(a, GaussianSummary(np.zeros(3), np.eye(3)))
        with pytest.raises(NumericError):
            frechet_distance(a, GaussianSummary(np.array([np.nan, 0.0]), np.eye(2)))


class TestSelectOptimalPoint:
    @pytest.fixture
    def setup(self, rng, schedule):
        denoiser = Denoiser((4, 4), 4, width=8, depth=2, time_dim=4)
        prior = PriorNet((4, 4), 4, width=8, depth=1).init(rng)
        batch = Dataset(rng.uniform(size=(32, 4)), rng.uniform(-1, 1, size=(32, 4, 4)))
        return denoiser, prior, batch, FeatureProjector.create(16, 6, seed=1)

    def test_single_candidate(self, setup, schedule):
        d, p, batch, proj = setup
        s = select_optimal_point(d, p, schedule, batch, [9], proj)
        assert s.op == 9 and s.candidates == [9]

    def test_untrained_is_total(self, setup, schedule):
        d, p, batch, proj = setup
        s = select_optimal_point(d, p, schedule, batch, range(2, 38), proj, seed=3)
        assert all(np.isfinite(v) for _, v in s.scores)
        assert s.op in s.candidates
        assert s.op == min(s.scores, key=lambda r: (r[1], r[0]))[0]

    def test_untrained_output_is_scaled_input(self, setup, schedule):
        from cmrestore.prior import prior_predict
        d, p, batch, _ = setup
        x_tilde = prior_predict(p, batch.cond)
        t = schedule.level(10)
        z = np.random.default_rng(0).standard_normal(x_tilde.shape)
        out = d.consistency_forward(x_tilde + t * z, batch.cond, t, schedule.config)
        np.testing.assert_allclose(out, skip_coefficients(t, schedule.config).c_skip * (x_tilde + t * z))

    def test_deterministic(self, setup, schedule):
        d, p, batch, proj = setup
        a = select_optimal_point(d, p, schedule, batch, range(2, 20), proj, seed=5)
        b = select_optimal_point(d, p, schedule, batch, range(2, 20), proj, seed=5)
        assert a.op == b.op and a.scores == b.scores

    def test_ties_go_to_smallest_index(self, setup, schedule, monkeypatch):
        import cmrestore.scorer as scorer
        d, p, batch, proj = setup
        monkeypatch.setattr(scorer, "restore_scores",
                            lambda *a, **k: [(n, 1.0 if n in (5, 8) else 2.0) for n in a[4]])
        assert select_optimal_point(d, p, schedule, batch, [8, 5, 3], proj).op == 5

    def test_empty(self, setup, schedule):
        d, p, batch, proj = setup
        with pytest.raises(UsageError):
            select_optimal_point(d, p, schedule, batch, [], proj)
