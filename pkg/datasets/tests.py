import io
import os
import tempfile

import numpy as np
from django.test import SimpleTestCase
from numpy.testing import assert_allclose

from commons.exceptions import InputError, ParseError
from datasets.logic import (
    RunningStandardizer,
    Sample,
    StreamConfig,
    format_libsvm,
    format_number,
    gen_dynamic_spheroids,
    gen_two_spheres,
    open_samples,
    parse_csv,
    parse_libsvm,
    standardize,
    write_csv,
    write_libsvm,
)


class LibsvmTests(SimpleTestCase):
    def test_parse_sparse_line(self):
        (s,) = parse_libsvm(["-1 1:0.5 3:2\n"], D=4)
        self.assertEqual(s.y, -1.0)
        assert_allclose(s.x, [0.5, 0.0, 2.0, 0.0])

    def test_errors_carry_line_number(self):
        bad = {
            "abc 1:2": "bad label",
            "1 1-2": "index:value",
            "1 4:1": "out of range",
            "1 2:1 1:3": "not strictly increasing",
            "1 1:nan": "non-finite",
            "": "empty line",
            "1 x:1": "bad pair",
        }
        for line, reason in bad.items():
            with self.subTest(line=line):
                with self.assertRaises(ParseError) as ctx:
                    list(parse_libsvm(["1 1:1", "-1 2:1", line], D=3))
                self.assertEqual(ctx.exception.line_no, 3)
                self.assertIn("line 3", str(ctx.exception))
                self.assertIn(reason, str(ctx.exception))

    def test_canonical_lines_round_trip(self):
        rng = np.random.default_rng(0)
        lines = []
        for _ in range(1000):
            idx = np.sort(rng.choice(np.arange(1, 21), size=rng.integers(0, 8), replace=False))
            vals = rng.standard_normal(len(idx))
            label = format_number(rng.choice([-1.0, 1.0]))
            lines.append(" ".join([label, *(f"{i}:{format_number(v)}" for i, v in zip(idx, vals))]))
        out = io.StringIO()
        self.assertEqual(write_libsvm(parse_libsvm(lines, D=20), out), 1000)
        self.assertEqual(out.getvalue().splitlines(), lines)

    def test_number_format(self):
        self.assertEqual(format_number(2.0), "2")
        self.assertEqual(format_number(-0.25), "-0.25")
        self.assertEqual(format_libsvm(Sample(x=np.array([0.0, 1.5]), y=None)), "0 2:1.5")


class CsvTests(SimpleTestCase):
    def test_header_is_skipped(self):
        rows = ["label,a,b", "1,0.5,2", "-1,1,3"]
        samples = list(parse_csv(rows, labeled=True))
        self.assertEqual([s.y for s in samples], [1.0, -1.0])
        assert_allclose(samples[1].x, [1.0, 3.0])

    def test_unlabeled_rows(self):
        samples = list(parse_csv(["1,2,3"], labeled=False, D=3))
        self.assertIsNone(samples[0].y)
        assert_allclose(samples[0].x, [1.0, 2.0, 3.0])

    def test_ragged_rows(self):
        with self.assertRaises(ParseError) as ctx:
            list(parse_csv(["1,2,3", "1,2"], labeled=True))
        self.assertEqual(ctx.exception.line_no, 2)

    def test_write_then_read(self):
        samples = [Sample(x=np.array([0.5, -2.0]), y=1.0), Sample(x=np.array([3.0, 0.0]), y=-1.0)]
        out = io.StringIO()
        write_csv(samples, out)
        self.assertEqual(out.getvalue(), "1,0.5,-2\n-1,3,0\n")
        again = list(parse_csv(out.getvalue().splitlines()))
        assert_allclose(again[0].x, samples[0].x)


class GeneratorTests(SimpleTestCase):
    def test_two_spheres_radii(self):
        samples = list(gen_two_spheres(500, sigma=0.0, seed=1))
        self.assertEqual(len(samples), 500)
        for s in samples:
            self.assertAlmostEqual(np.linalg.norm(s.x), 1.0 if s.y > 0 else 2.0, places=12)
        self.assertEqual({s.y for s in samples}, {1.0, -1.0})

    def test_two_spheres_is_seeded(self):
        a = [s.x for s in gen_two_spheres(20, seed=5)]
        b = [s.x for s in gen_two_spheres(20, seed=5)]
        assert_allclose(a, b)

    def test_dynamic_spheroids(self):
        X = np.array([s.x for s in gen_dynamic_spheroids(400, seed=2)])
        first = (X[:200, 0] / 3) ** 2 + X[:200, 1] ** 2 + X[:200, 2] ** 2
        second = X[200:, 0] ** 2 + (X[200:, 1] / 3) ** 2 + X[200:, 2] ** 2
        assert_allclose(first, 1.0)
        assert_allclose(second, 1.0)

    def test_dynamic_spheroids_needs_even_n(self):
        with self.assertRaises(InputError):
            list(gen_dynamic_spheroids(401))


class StandardizeTests(SimpleTestCase):
    def test_two_pass_with_constant_coordinate(self):
        rng = np.random.default_rng(3)
        samples = [Sample(x=np.array([v, 7.0]), y=1.0) for v in rng.normal(5.0, 2.0, 100)]
        with self.assertLogs("datasets.logic", "WARNING") as logs:
            X = np.array([s.x for s in standardize(samples, "two_pass")])
        self.assertIn("zero-variance", logs.output[0])
        self.assertAlmostEqual(X[:, 0].mean(), 0.0, places=12)
        self.assertAlmostEqual(X[:, 0].std(), 1.0, places=12)
        assert_allclose(X[:, 1], 7.0)

    def test_running_estimates_match_numpy(self):
        X = np.random.default_rng(4).normal(3.0, 2.0, (5000, 2))
        scaler = RunningStandardizer(2)
        for x in X:
            scaler.update(x)
        assert_allclose(scaler.mean, X.mean(axis=0), rtol=1e-10)
        assert_allclose(scaler.std, X.std(axis=0), rtol=1e-8)

    def test_unknown_mode(self):
        with self.assertRaises(InputError):
            list(standardize([], "minmax"))


class OpenSamplesTests(SimpleTestCase):
    def setUp(self):
        fd, self.path = tempfile.mkstemp(suffix=".libsvm")
        with os.fdopen(fd, "w") as fh:
            fh.write("1 1:1\n-1 2:2\n1 3:3\n-1 1:4 3:1\n")

    def tearDown(self):
        os.remove(self.path)

    def test_reads_file(self):
        samples = list(open_samples(StreamConfig(source="libsvm", path=self.path, D=3)))
        self.assertEqual([s.y for s in samples], [1.0, -1.0, 1.0, -1.0])

    def test_shuffle_is_a_seeded_permutation(self):
        cfg = StreamConfig(source="libsvm", path=self.path, D=3, shuffle_seed=9)
        first = [tuple(s.x) for s in open_samples(cfg)]
        self.assertEqual(first, [tuple(s.x) for s in open_samples(cfg)])
        plain = [tuple(s.x) for s in open_samples(StreamConfig(source="libsvm", path=self.path, D=3))]
        self.assertCountEqual(first, plain)

    def test_libsvm_needs_dimension(self):
        with self.assertRaises(InputError):
            StreamConfig(source="libsvm", path=self.path)
