import numpy as np
from django.test import SimpleTestCase
from numpy.testing import assert_allclose

from commons.exceptions import DimensionError, InputError, NotPSDError
from kernels.logic import KernelSpec, eval_kernel, kernel_matrix, kernel_vector, psd_sqrt_factor


class KernelEvalTests(SimpleTestCase):
    def setUp(self):
        self.rng = np.random.default_rng(1)

    def test_gaussian_self_and_far(self):
        spec = KernelSpec("gaussian", gamma=1.0)
        x = self.rng.standard_normal(4)
        self.assertEqual(eval_kernel(spec, x, x), 1.0)
        self.assertLess(eval_kernel(spec, np.zeros(1), np.array([100.0])), 1e-12)

    def test_gaussian_self_kernel_is_one(self):
        spec = KernelSpec("gaussian", gamma=100.0)
        X = 10 * self.rng.standard_normal((1000, 3))
        for x in X:
            self.assertEqual(eval_kernel(spec, x, x), 1.0)
        assert_allclose(np.diag(kernel_matrix(spec, X)), np.ones(1000), rtol=0, atol=0)

    def test_polynomial_and_linear(self):
        x, y = np.array([1.0, 2.0]), np.array([3.0, -1.0])
        self.assertEqual(eval_kernel(KernelSpec("polynomial", degree=2, offset=1.0), x, y), 4.0)
        self.assertEqual(eval_kernel(KernelSpec("linear"), x, y), 1.0)

    def test_symmetry(self):
        for spec in (KernelSpec("gaussian", gamma=2.0), KernelSpec("polynomial", degree=3), KernelSpec("linear")):
            x, y = self.rng.standard_normal(5), self.rng.standard_normal(5)
            self.assertEqual(eval_kernel(spec, x, y), eval_kernel(spec, y, x))

    def test_vector_matches_scalar(self):
        spec = KernelSpec("gaussian", gamma=3.0)
        basis = self.rng.standard_normal((6, 3))
        x = self.rng.standard_normal(3)
        expected = [eval_kernel(spec, b, x) for b in basis]
        assert_allclose(kernel_vector(spec, basis, x), expected, rtol=0, atol=1e-12)
        assert_allclose(kernel_vector(spec, x[None, :], x), [1.0], atol=1e-12)
        self.assertEqual(kernel_vector(spec, np.zeros((0, 3)), x).shape, (0,))

    def test_matrix_symmetric_psd(self):
        spec = KernelSpec("gaussian", gamma=1.5)
        X = self.rng.standard_normal((30, 3))
        K = kernel_matrix(spec, X)
        self.assertTrue(np.array_equal(K, K.T))
        self.assertGreater(np.linalg.eigvalsh(K).min(), -1e-10)
        assert_allclose(np.diag(K), 1.0)

    def test_dimension_mismatch(self):
        spec = KernelSpec("linear")
        with self.assertRaises(DimensionError):
            eval_kernel(spec, np.ones(2), np.ones(3))
        with self.assertRaises(DimensionError):
            kernel_vector(spec, np.ones((4, 2)), np.ones(3))

    def test_invalid_spec(self):
        with self.assertRaises(InputError):
            KernelSpec("gaussian", gamma=0.0)
        with self.assertRaises(InputError):
            KernelSpec("polynomial", degree=0)
        with self.assertRaises(InputError):
            KernelSpec("laplacian")


class PsdSqrtTests(SimpleTestCase):
    def test_identity(self):
        assert_allclose(psd_sqrt_factor(np.eye(3)), np.eye(3), atol=1e-12)

    def test_reconstructs_psd(self):
        rng = np.random.default_rng(2)
        B = rng.standard_normal((5, 3))
        M = B @ B.T  # rank 3
        G = psd_sqrt_factor(M)
        assert_allclose(G.T @ G, M, atol=1e-10)

    def test_reconstructs_random_psd_matrices(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            m = int(rng.integers(1, 9))
            rank = int(rng.integers(1, m + 1))
            B = rng.standard_normal((m, rank)) * 10.0 ** rng.uniform(-3, 3)
            M = B @ B.T
            G = psd_sqrt_factor(M)
            self.assertLessEqual(np.linalg.norm(G.T @ G - M) / np.linalg.norm(M), 1e-8)

    def test_rounding_negative_is_clamped(self):
        M = np.diag([1.0, -1e-14])
        G = psd_sqrt_factor(M)
        assert_allclose(G.T @ G, np.diag([1.0, 0.0]), atol=1e-12)

    def test_indefinite_raises(self):
        with self.assertRaises(NotPSDError):
            psd_sqrt_factor(np.diag([1.0, -1.0]))
