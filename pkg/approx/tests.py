import numpy as np
from django.test import SimpleTestCase
from numpy.testing import assert_allclose

from approx.logic import (
    ErrorRecord,
    approx_kernel_matrix,
    bound_errors,
    check_prop4,
    check_prop7,
    feature_map_z,
    feature_matrix,
    kernel_mismatch,
    mismatch_curve,
    spectral_norm,
    window_mismatch,
    windowed_mismatch,
)
from budget.logic import BudgetPolicy, CensorPolicy, run_okfeb
from commons.exceptions import DimensionError, InputError, PreconditionError
from datasets.logic import gen_dynamic_spheroids, gen_two_spheres
from kernels.logic import KernelSpec, kernel_matrix
from learners.logic import ridge_closed_form
from subspace.logic import StepSchedule

GAUSS = KernelSpec("gaussian", gamma=2.0)


def two_spheres(n, seed=0):
    samples = list(gen_two_spheres(n, sigma=0.1, seed=seed))
    return np.array([s.x for s in samples]), np.array([s.y for s in samples])


def trained_model(X, r=5, B=20, seed=0):
    run = run_okfeb(X, GAUSS, r=r, lam=1e-3, censor=CensorPolicy(), budget=BudgetPolicy(B=B, beta=0.9),
                    schedule=StepSchedule("harmonic"), seed=seed)
    return run.model


class FeatureMapTests(SimpleTestCase):
    def test_inner_products_reproduce_approximate_kernel(self):
        X, _ = two_spheres(40, seed=1)
        model = trained_model(X)
        Q = feature_matrix(model, X)
        Z = np.column_stack([feature_map_z(model, Q[:, j]) for j in range(Q.shape[1])])
        assert_allclose(Z.T @ Z, approx_kernel_matrix(model, Q), atol=1e-8)

    def test_dual_predictions_match_linear_predictions(self):
        X, y = two_spheres(40, seed=6)
        model = trained_model(X)
        Q = feature_matrix(model, X)
        Z = np.column_stack([feature_map_z(model, Q[:, j]) for j in range(Q.shape[1])])
        beta = ridge_closed_form(approx_kernel_matrix(model, Q), y, 0.1)
        assert_allclose(approx_kernel_matrix(model, Q) @ beta, Z.T @ (Z @ beta), atol=1e-8)

    def test_wrong_feature_length(self):
        X, _ = two_spheres(10)
        model = trained_model(X, r=3)
        with self.assertRaises(DimensionError):
            feature_map_z(model, np.ones(4))
        with self.assertRaises(DimensionError):
            approx_kernel_matrix(model, np.ones((4, 2)))


class MismatchTests(SimpleTestCase):
    def test_identity_against_zero(self):
        self.assertAlmostEqual(kernel_mismatch(np.eye(2), np.zeros((2, 2))), np.sqrt(2) / 2)

    def test_shape_mismatch(self):
        with self.assertRaises(DimensionError):
            kernel_mismatch(np.eye(2), np.eye(3))

    def test_metric_on_symmetric_matrices(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            A, B, C = (M + M.T for M in rng.standard_normal((3, 6, 6)))
            self.assertEqual(kernel_mismatch(A, A), 0.0)
            self.assertGreater(kernel_mismatch(A, B), 0.0)
            self.assertEqual(kernel_mismatch(A, B), kernel_mismatch(B, A))
            self.assertLessEqual(kernel_mismatch(A, C), kernel_mismatch(A, B) + kernel_mismatch(B, C) + 1e-12)

    def test_windowed_average_of_fixed_model(self):
        X, _ = two_spheres(30, seed=2)
        model = trained_model(X)
        trajectory = [model] * 30
        expected = np.mean([window_mismatch(X[end - 9: end + 1], model) for end in range(10, 30)])
        self.assertAlmostEqual(windowed_mismatch(X, trajectory, 10), expected, places=12)

    def test_windowed_preconditions(self):
        X, _ = two_spheres(10)
        model = trained_model(X)
        with self.assertRaises(InputError):
            windowed_mismatch(X, [model] * 10, 0)
        with self.assertRaises(PreconditionError):
            windowed_mismatch(X, [model] * 10, 10)
        with self.assertRaises(DimensionError):
            windowed_mismatch(X, [model] * 9, 5)

    def test_windowed_mismatch_falls_with_rank(self):
        X = np.array([s.x for s in gen_dynamic_spheroids(500, seed=0)])
        values = []
        for r in (5, 10, 15):
            trajectory = [None] * X.shape[0]

            def keep(t, model, res):
                trajectory[t - 1] = model.snapshot() if t > 100 else None

            run_okfeb(X, GAUSS, r=r, lam=1e-3, censor=CensorPolicy(), budget=BudgetPolicy(B=2 * r),
                      schedule=StepSchedule("inv_feature_norm"), seed=0, on_step=keep)
            values.append(windowed_mismatch(X, trajectory, 100))
        rises = [later / earlier for earlier, later in zip(values, values[1:]) if later > earlier]
        self.assertLessEqual(len(rises), 1, values)
        self.assertTrue(all(ratio <= 1.05 for ratio in rises), values)
        self.assertLess(values[-1], values[0])

    def test_curve_has_one_value_per_model(self):
        X, _ = two_spheres(40, seed=3)
        models = [trained_model(X, r=r) for r in (2, 4, 8)]
        curve = mismatch_curve(GAUSS, X, models)
        self.assertEqual(len(curve), 3)
        self.assertTrue(all(np.isfinite(v) and v >= 0 for v in curve))


class SpectralNormTests(SimpleTestCase):
    def test_matches_dense_eigenvalues(self):
        rng = np.random.default_rng(0)
        for _ in range(10):
            B = rng.standard_normal((12, 4))
            M = B @ B.T
            expected = np.abs(np.linalg.eigvalsh(M)).max()
            self.assertAlmostEqual(spectral_norm(M) / expected, 1.0, places=5)

    def test_zero_matrix(self):
        self.assertEqual(spectral_norm(np.zeros((3, 3))), 0.0)

    def test_not_square(self):
        with self.assertRaises(DimensionError):
            spectral_norm(np.ones((2, 3)))


class BoundTests(SimpleTestCase):
    def test_kernel_approximation_bound_over_seeds(self):
        for seed in range(100):
            X, _ = two_spheres(60, seed=seed)
            model = trained_model(X, r=4, B=15, seed=seed)
            Q = feature_matrix(model, X)
            report = check_prop4(bound_errors(model, X, Q), kernel_matrix(GAUSS, X), approx_kernel_matrix(model, Q))
            self.assertTrue(report.hypothesis_ok, f"seed {seed}")
            self.assertTrue(report.holds, f"seed {seed}: {report}")

    def test_kernel_approximation_flags_hypothesis(self):
        report = check_prop4([ErrorRecord(e=2.0)], np.array([[4.0]]), np.zeros((1, 1)))
        self.assertFalse(report.hypothesis_ok)

    def test_ridge_stability_example(self):
        report = check_prop7(np.eye(2), np.zeros((2, 2)), np.ones(2), lam=1.0)
        self.assertAlmostEqual(report.lhs, np.sqrt(2) / 6)
        self.assertAlmostEqual(report.rhs, 0.5)
        self.assertTrue(report.holds)
        self.assertEqual(report.to_dict()["name"], "ridge_stability")

    def test_ridge_stability_on_extracted_features(self):
        X, y = two_spheres(80, seed=4)
        model = trained_model(X)
        Q = feature_matrix(model, X)
        K, K_hat = kernel_matrix(GAUSS, X), approx_kernel_matrix(model, Q)
        for lam in (0.1, 1.0):
            report = check_prop7(K, K_hat, y, lam)
            self.assertTrue(report.holds, f"lambda {lam}: {report}")
            self.assertGreaterEqual(report.slack, 0.0)

    def test_ridge_lambda_must_be_positive(self):
        with self.assertRaises(InputError):
            check_prop7(np.eye(2), np.eye(2), np.ones(2), lam=0.0)
