import numpy as np
from django.test import SimpleTestCase
from numpy.testing import assert_allclose

from commons.exceptions import (
    ConsistencyError,
    DimensionError,
    InputError,
    OkfebError,
    ParseError,
    SingularityError,
)
from commons.linalg import spd_inverse, spd_solve


class ExceptionHierarchyTests(SimpleTestCase):
    def test_builtin_bases(self):
        self.assertTrue(issubclass(DimensionError, ValueError))
        self.assertTrue(issubclass(DimensionError, InputError))
        self.assertTrue(issubclass(SingularityError, ArithmeticError))
        self.assertTrue(issubclass(ConsistencyError, RuntimeError))
        for cls in (DimensionError, ParseError, SingularityError, ConsistencyError):
            self.assertTrue(issubclass(cls, OkfebError))

    def test_parse_error_carries_line(self):
        err = ParseError(7, "bad pair 'x'")
        self.assertEqual(err.line_no, 7)
        self.assertIn("line 7", str(err))
        self.assertEqual(err.kind, "parse")


class SpdSolveTests(SimpleTestCase):
    def test_solves_spd_system(self):
        rng = np.random.default_rng(0)
        B = rng.standard_normal((5, 5))
        M = B @ B.T + 0.5 * np.eye(5)
        b = rng.standard_normal(5)
        assert_allclose(M @ spd_solve(M, b), b, atol=1e-10)
        assert_allclose(spd_inverse(M) @ M, np.eye(5), atol=1e-10)

    def test_singular_without_jitter_raises(self):
        with self.assertRaises(SingularityError):
            spd_solve(np.zeros((3, 3)), np.ones(3), jitter=False)

    def test_jitter_rescues_semidefinite(self):
        M = np.array([[1.0, 1.0], [1.0, 1.0]])
        x = spd_solve(M, np.array([1.0, 1.0]))
        self.assertTrue(np.all(np.isfinite(x)))

    def test_non_square(self):
        with self.assertRaises(DimensionError):
            spd_solve(np.ones((2, 3)), np.ones(2))
