import numpy as np
from django.test import SimpleTestCase
from numpy.testing import assert_allclose

from commons.exceptions import DimensionError, InputError
from datasets.logic import gen_two_spheres
from learners.logic import (
    FeatureWhitener,
    LinearModel,
    classify,
    lms_step,
    predict,
    ridge_closed_form,
    svm_step,
)


class PegasosTests(SimpleTestCase):
    def test_first_step(self):
        z = np.array([0.3, 0.4])
        m = svm_step(LinearModel.zeros(2, C=1.0), z, -1)
        assert_allclose(m.w, -z)
        self.assertEqual(m.b, -1.0)
        self.assertEqual(m.t, 1)

    def test_first_step_radius_depends_on_projection(self):
        # eta_1 = C: the raw step lands on C e1, the projected one on sqrt(C) e1
        m = svm_step(LinearModel.zeros(2, C=10.0), np.array([1.0, 0.0]), 1)
        assert_allclose(m.w, [np.sqrt(10.0), 0.0])
        m = svm_step(LinearModel.zeros(2, C=10.0, project=False), np.array([1.0, 0.0]), 1)
        assert_allclose(m.w, [10.0, 0.0])

    def test_satisfied_margin_only_shrinks(self):
        m = LinearModel(w=np.array([2.0, 0.0]), t=1, C=1.0, project=False)
        svm_step(m, np.array([1.0, 0.0]), 1)
        assert_allclose(m.w, [1.0, 0.0])
        self.assertEqual(m.b, 0.0)

    def test_projection_radius(self):
        rng = np.random.default_rng(0)
        m = LinearModel.zeros(3, C=4.0)
        for _ in range(200):
            svm_step(m, 10 * rng.standard_normal(3), rng.choice([-1, 1]))
            self.assertLessEqual(np.linalg.norm(m.w), 2.0 + 1e-12)

    def test_unprojected_norm_stays_near_radius_on_unit_features(self):
        # w_{t+1} = C/t * sum of violating y z, so ||w|| <= C throughout and
        # shrinks like C/sqrt(t) on random labels; the first step alone has
        # norm C, which is inside sqrt(C) only for C <= 1
        for C, burn_in in ((0.25, 0), (1.0, 0), (4.0, 100)):
            for seed in range(5):
                rng = np.random.default_rng(seed)
                m = LinearModel.zeros(5, C=C, project=False)
                for step in range(1, 1001):
                    z = rng.standard_normal(5)
                    svm_step(m, z / np.linalg.norm(z), rng.choice([-1, 1]))
                    if step > burn_in:
                        self.assertLessEqual(np.linalg.norm(m.w), 1.1 * np.sqrt(C), f"C={C} seed {seed} step {step}")

    def test_rejects_non_binary_labels(self):
        with self.assertRaises(InputError):
            svm_step(LinearModel.zeros(2), np.ones(2), 0.5)

    def test_separable_stream(self):
        rng = np.random.default_rng(1)

        def draw(n):
            X = rng.uniform(-1, 1, (n, 2))
            X = X[np.abs(X[:, 0]) > 0.2]
            return X, np.where(X[:, 0] > 0, 1, -1)

        m = LinearModel.zeros(2, C=10.0, fit_intercept=False)
        X, y = draw(3000)
        for z, label in zip(X, y):
            svm_step(m, z, label)
        X, y = draw(1000)
        accuracy = np.mean([classify(m, z) == label for z, label in zip(X, y)])
        self.assertGreaterEqual(accuracy, 0.95)

    def test_intercept_learns_offset_boundary(self):
        rng = np.random.default_rng(6)
        X = rng.uniform(0, 2, (4000, 2))
        X = X[np.abs(X[:, 0] - 1.0) > 0.2]
        y = np.where(X[:, 0] > 1.0, 1, -1)
        m = LinearModel.zeros(2, C=10.0)
        for z, label in zip(X[:3000], y[:3000]):
            svm_step(m, z, label)
        accuracy = np.mean([classify(m, z) == label for z, label in zip(X[3000:], y[3000:])])
        self.assertGreaterEqual(accuracy, 0.9)
        self.assertLess(m.b, 0.0)

    def test_raw_features_cannot_split_concentric_spheres(self):
        train = list(gen_two_spheres(2000, sigma=0.1, seed=2))
        test = list(gen_two_spheres(2000, sigma=0.1, seed=3))
        m = LinearModel.zeros(3, C=1.0)
        for s in train:
            svm_step(m, s.x, s.y)
        accuracy = np.mean([classify(m, s.x) == s.y for s in test])
        self.assertLessEqual(accuracy, 0.65)


class LmsTests(SimpleTestCase):
    def test_converges_to_linear_target(self):
        rng = np.random.default_rng(4)
        w_true = np.array([0.5, -1.0, 2.0])
        m = LinearModel.zeros(3, mu=0.05, lambda_reg=1e-4)
        for z in rng.uniform(-1, 1, (5000, 3)):
            lms_step(m, z, float(w_true @ z) + 0.7)
        assert_allclose(m.w, w_true, atol=1e-2)
        self.assertAlmostEqual(m.b, 0.7, places=2)

    def test_default_step_uses_largest_norm(self):
        m = LinearModel.zeros(2)
        lms_step(m, np.array([2.0, 0.0]), 1.0)
        # mu = 0.5 / (4 + 1), err = 1
        assert_allclose(m.w, [0.2, 0.0])
        self.assertAlmostEqual(m.b, 0.1)
        self.assertEqual(m.z_sq_max, 4.0)

    def test_default_step_without_intercept(self):
        m = LinearModel.zeros(2, fit_intercept=False)
        lms_step(m, np.array([2.0, 0.0]), 1.0)
        assert_allclose(m.w, [0.25, 0.0])
        self.assertEqual(m.b, 0.0)

    def test_default_step_stays_bounded(self):
        rng = np.random.default_rng(8)
        w_true = rng.standard_normal(6)
        m = LinearModel.zeros(6, lambda_reg=1e-3)
        scales = rng.choice([0.1, 1.0, 10.0], size=10_000)
        for scale in scales:
            z = scale * rng.standard_normal(6)
            lms_step(m, z, float(w_true @ z) + 0.1 * rng.standard_normal())
            self.assertTrue(np.all(np.isfinite(m.w)))
        self.assertLess(np.linalg.norm(m.w), 10 * np.linalg.norm(w_true))

    def test_dimension_check(self):
        with self.assertRaises(DimensionError):
            lms_step(LinearModel.zeros(2), np.ones(3), 1.0)


class WhitenerTests(SimpleTestCase):
    def test_running_moments_match_numpy(self):
        rng = np.random.default_rng(9)
        Z = rng.standard_normal((3000, 3)) @ np.array([[2.0, 0.0, 0.0], [0.5, 1.0, 0.0], [0.0, 0.3, 0.1]]) + 4.0
        whitener = FeatureWhitener(3)
        for z in Z:
            whitener.update(z)
        assert_allclose(whitener.mean, Z.mean(axis=0), rtol=1e-10)
        assert_allclose(whitener.cov, np.cov(Z.T, bias=True), rtol=1e-8, atol=1e-12)

    def test_output_is_decorrelated(self):
        rng = np.random.default_rng(10)
        Z = rng.standard_normal((4000, 3)) @ np.array([[3.0, 1.0, 0.0], [0.0, 0.2, 0.0], [0.0, 0.0, 0.1]])
        whitener = FeatureWhitener(3)
        for z in Z:
            whitener.update(z)
        W = np.array([whitener.transform(z) for z in Z])
        assert_allclose(np.cov(W.T, bias=True), np.eye(3), atol=1e-3)

    def test_dead_direction_stays_zero(self):
        rng = np.random.default_rng(11)
        whitener = FeatureWhitener(2)
        for v in rng.standard_normal(100):
            whitener.update(np.array([v, 0.0]))
        out = whitener.transform(np.array([1.0, 0.0]))
        self.assertAlmostEqual(out[1], 0.0, places=12)
        self.assertTrue(np.isfinite(out[0]))

    def test_too_few_samples_only_centers(self):
        whitener = FeatureWhitener(2).update(np.array([1.0, 2.0]))
        assert_allclose(whitener.transform(np.array([3.0, 2.0])), [2.0, 0.0])

    def test_dimension_check(self):
        with self.assertRaises(DimensionError):
            FeatureWhitener(2).update(np.ones(3))
        with self.assertRaises(InputError):
            FeatureWhitener(0)


class RidgeTests(SimpleTestCase):
    def test_identity_kernel(self):
        y = np.array([1.0, -2.0, 3.0])
        assert_allclose(ridge_closed_form(np.eye(3), y, 0.5), y / 2.5)

    def test_matches_dense_solve(self):
        rng = np.random.default_rng(5)
        B = rng.standard_normal((6, 3))
        K, y = B @ B.T, rng.standard_normal(6)
        expected = np.linalg.solve(K + 0.1 * 6 * np.eye(6), y)
        assert_allclose(ridge_closed_form(K, y, 0.1), expected, rtol=1e-10)

    def test_lambda_must_be_positive(self):
        with self.assertRaises(InputError):
            ridge_closed_form(np.eye(2), np.ones(2), 0.0)


class PredictTests(SimpleTestCase):
    def test_zero_score_is_positive_class(self):
        m = LinearModel.zeros(2)
        self.assertEqual(predict(m, np.ones(2)), 0.0)
        self.assertEqual(classify(m, np.ones(2)), 1)

    def test_intercept_enters_the_score(self):
        m = LinearModel(w=np.array([1.0, 0.0]), b=-2.0)
        self.assertEqual(predict(m, np.array([1.5, 3.0])), -0.5)
        self.assertEqual(classify(m, np.array([1.5, 3.0])), -1)
