import json
import os
import shutil
import tempfile
from io import StringIO
from unittest import mock

import numpy as np
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase, TestCase, override_settings

from commons.exceptions import ConfigError
from runs.logic import DEFAULTS, RunOutputs, build_config, segment_summary
from runs.models import Run
from runs.tasks import execute_run_task


def run(command, *args):
    out, err = StringIO(), StringIO()
    call_command(command, *args, stdout=out, stderr=err)
    return out.getvalue(), err.getvalue()


def json_lines(text):
    return [json.loads(line) for line in text.splitlines()]


class TempDirMixin:
    def setUp(self):
        super().setUp()
        self.tmp = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.tmp)
        super().tearDown()

    def write(self, name, text):
        path = os.path.join(self.tmp, name)
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
        return path


class BuildConfigTests(SimpleTestCase):
    def test_defaults(self):
        cfg = build_config("track", {})
        self.assertEqual(cfg.rank, DEFAULTS["rank"])
        self.assertIsNone(cfg.budget)
        self.assertEqual(cfg.epsilon, 0.0)
        self.assertEqual(cfg.cap, 2000)

    def test_preset_then_explicit(self):
        cfg = build_config("track", {"dataset": "adult", "rank": 20, "source": "two-spheres"})
        self.assertEqual(cfg.rank, 20)
        self.assertEqual(cfg.budget, 60)
        self.assertEqual(cfg.gamma, 20.0)

    def test_round_trip_through_dict(self):
        cfg = build_config("classify", {"segments": "10,20", "epsilon": "auto"})
        self.assertEqual(type(cfg).from_dict(json.loads(json.dumps(cfg.to_dict()))), cfg)

    def test_small_budget_warns(self):
        with self.assertLogs("runs.forms", "WARNING") as logs:
            build_config("track", {"rank": 4, "budget": 5})
        self.assertIn("1.5 r", logs.output[0])

    def test_whitening_defaults_to_classification_only(self):
        self.assertTrue(build_config("classify", {}).whiten)
        self.assertFalse(build_config("regress", {}).whiten)
        self.assertFalse(build_config("classify", {"whiten": False}).whiten)
        self.assertTrue(build_config("regress", {"whiten": True}).whiten)

    def test_kpca_warmup_validation(self):
        self.assertIsNone(build_config("track", {"init": "kpca"}).warmup)
        with self.assertRaisesMessage(ConfigError, "--warmup needs --init kpca"):
            build_config("track", {"warmup": 10})
        with self.assertRaisesMessage(ConfigError, "--warmup must be >= --rank"):
            build_config("track", {"init": "kpca", "rank": 5, "warmup": 3})
        with self.assertRaisesMessage(ConfigError, "exceeds --budget"):
            build_config("track", {"init": "kpca", "rank": 5, "budget": 8, "warmup": 9})

    def test_segment_summary(self):
        seg = segment_summary([1.0, 1.0, 3.0, 5.0], (2,))
        self.assertEqual([(s["start"], s["end"]) for s in seg], [(1, 2), (3, 4)])
        self.assertEqual(seg[1]["mean_ls_fit"], 4.0)


class TrackCommandTests(TempDirMixin, SimpleTestCase):
    def test_one_line_per_sample_plus_summary(self):
        out, _ = run("track", "--n", "50", "--rank", "3", "--budget", "6", "--gamma", "2")
        lines = json_lines(out)
        self.assertEqual(len(lines), 51)
        self.assertEqual([rec["n"] for rec in lines[:-1]], list(range(1, 51)))
        self.assertTrue(all(rec["sv_count"] <= 6 for rec in lines[:-1]))
        self.assertNotIn("elapsed_ns", lines[0])
        summary = lines[-1]["summary"]
        self.assertEqual(summary["n"], 50)
        self.assertEqual(summary["update_rate"], 1.0)

    def test_deterministic(self):
        args = ("--n", "40", "--rank", "3", "--budget", "5", "--epsilon", "auto")
        self.assertEqual(run("track", *args)[0], run("track", *args)[0])

    def test_adaptive_censoring(self):
        out, _ = run("track", "--n", "300", "--rank", "3", "--budget", "6", "--epsilon", "auto")
        summary = json_lines(out)[-1]["summary"]
        self.assertGreater(summary["epsilon"], 0.0)
        self.assertLess(summary["update_rate"], 1.0)

    def test_env_seed_wins(self):
        expected = run("track", "--n", "20", "--rank", "2", "--seed", "3")[0]
        with override_settings(OKFEB_SEED="3"):
            self.assertEqual(run("track", "--n", "20", "--rank", "2", "--seed", "0")[0], expected)

    def test_bad_env_seed(self):
        with override_settings(OKFEB_SEED="x"):
            with self.assertRaisesMessage(CommandError, "config: OKFEB_SEED must be an integer"):
                run("track", "--n", "5")

    def test_cadence_timing_and_segments(self):
        out, _ = run("track", "--n", "50", "--rank", "2", "--cadence", "10", "--timing", "--segments", "20")
        lines = json_lines(out)
        self.assertEqual([rec["n"] for rec in lines[:-1]], [10, 20, 30, 40, 50])
        self.assertTrue(all(rec["elapsed_ns"] >= 0 for rec in lines[:-1]))
        self.assertEqual([s["start"] for s in lines[-1]["summary"]["segments"]], [1, 21])

    def test_window_mismatch_column(self):
        out, _ = run("track", "--n", "30", "--rank", "2", "--window", "10")
        lines = json_lines(out)[:-1]
        self.assertNotIn("window_mismatch", lines[9])
        self.assertGreaterEqual(lines[10]["window_mismatch"], 0.0)

    def test_csv_output(self):
        out, err = run("track", "--n", "20", "--rank", "2", "--csv")
        rows = out.splitlines()
        self.assertEqual(rows[0], "n,ls_fit,censored,sv_count,removed_index,cum_avg_fit")
        self.assertEqual(len(rows), 21)
        self.assertIn('"summary"', err)

    def test_reads_generated_file(self):
        path = os.path.join(self.tmp, "spheres.libsvm")
        run("synth", "--n", "40", "--seed", "1", "--output", path)
        out, _ = run("track", "--input", path, "--dim", "3", "--rank", "3")
        self.assertEqual(len(json_lines(out)), 41)

    def test_empty_input(self):
        path = self.write("empty.libsvm", "")
        out, _ = run("track", "--input", path, "--dim", "3")
        lines = json_lines(out)
        self.assertEqual(len(lines), 1)
        self.assertEqual(lines[0]["summary"]["n"], 0)

    def test_parse_error_is_one_line(self):
        path = self.write("bad.libsvm", "1 1:1\n1 3:1 2:1\n")
        with self.assertRaises(CommandError) as ctx:
            run("track", "--input", path, "--dim", "3")
        self.assertTrue(str(ctx.exception).startswith("parse: line 2:"))
        self.assertNotIn("\n", str(ctx.exception))

    def test_missing_dim(self):
        path = self.write("x.libsvm", "1 1:1\n")
        with self.assertRaisesMessage(CommandError, "libsvm input needs --dim"):
            run("track", "--input", path)

    def test_invalid_beta(self):
        with self.assertRaisesMessage(CommandError, "--beta must be in (0, 1]"):
            run("track", "--beta", "2")

    def test_kpca_warmup_block(self):
        out, _ = run("track", "--n", "30", "--rank", "3", "--budget", "8", "--gamma", "2", "--init", "kpca", "--warmup", "5")
        lines = json_lines(out)
        self.assertEqual(len(lines), 31)
        self.assertEqual([rec["sv_count"] for rec in lines[:5]], [5] * 5)
        self.assertFalse(any(rec["censored"] for rec in lines[:5]))
        self.assertTrue(all(rec["sv_count"] <= 8 for rec in lines[:-1]))

    def test_stream_shorter_than_warmup(self):
        with self.assertRaisesMessage(CommandError, "before the kpca warm-up block"):
            run("track", "--n", "4", "--rank", "3", "--init", "kpca", "--warmup", "6")

    def test_csv_input(self):
        path = self.write("data.csv", "y,a,b\n1,0,1\n-1,1,0\n1,1,1\n")
        out, _ = run("track", "--input", path, "--format", "csv", "--rank", "2")
        self.assertEqual(len(json_lines(out)), 4)


class LearnerCommandTests(TempDirMixin, SimpleTestCase):
    def test_classify(self):
        out, _ = run("classify", "--n", "100", "--rank", "4", "--budget", "8", "--gamma", "2")
        lines = json_lines(out)
        self.assertEqual(len(lines), 101)
        self.assertTrue(all(0.0 <= rec["accuracy"] <= 1.0 for rec in lines[:-1]))
        summary = lines[-1]["summary"]
        self.assertEqual(summary["features"], "okfeb")
        self.assertEqual(summary["accuracy"], lines[-2]["accuracy"])

    def test_classify_raw_features(self):
        out, _ = run("classify", "--n", "50", "--rank", "2", "--features", "raw")
        self.assertEqual(json_lines(out)[-1]["summary"]["features"], "raw")

    def test_regress(self):
        out, _ = run("regress", "--n", "80", "--rank", "3", "--budget", "6", "--lambda-reg", "0.01")
        lines = json_lines(out)
        self.assertEqual(len(lines), 81)
        self.assertTrue(all(rec["mse"] >= 0.0 for rec in lines[:-1]))
        self.assertNotIn("accuracy", lines[0])

    def test_classify_two_spheres_accuracy(self):
        def last_thousand(out):
            lines = json_lines(out)[:-1]
            end, before = lines[-1], lines[-1001]
            return (end["accuracy"] * end["n"] - before["accuracy"] * before["n"]) / (end["n"] - before["n"])

        args = ["--n", "5000", "--gamma", "100", "--rank", "7", "--budget", "14", "-C", "10", "--lambda", "1e-3"]
        out, _ = run("classify", *args)
        self.assertGreaterEqual(last_thousand(out), 0.90)
        out, _ = run("classify", *args, "--features", "raw")
        self.assertLessEqual(last_thousand(out), 0.65)

    def test_whitening_flags(self):
        out, _ = run("classify", "--n", "30", "--rank", "3", "--no-whiten")
        self.assertFalse(json_lines(out)[-1]["summary"]["whiten"])
        out, _ = run("regress", "--n", "30", "--rank", "3", "--whiten")
        self.assertTrue(json_lines(out)[-1]["summary"]["whiten"])

    def test_regress_sine_of_norm(self):
        rng = np.random.default_rng(0)
        x = rng.uniform(-3.0, 3.0, 5000)
        rows = "".join(f"{float(np.sin(abs(v)))!r},{float(v)!r}\n" for v in x)
        path = self.write("sine.csv", "y,x\n" + rows)
        out, _ = run("regress", "--input", path, "--format", "csv", "--gamma", "1", "--rank", "10",
                     "--budget", "20", "--init", "kpca")
        summary = json_lines(out)[-1]["summary"]
        self.assertEqual(summary["n"], 5000)
        self.assertLessEqual(summary["mse"], 0.05)

    def test_classify_needs_labels(self):
        with self.assertRaises(CommandError):
            run("classify", "--synthetic", "dynamic-spheroids", "--n", "20")


class SynthCommandTests(SimpleTestCase):
    def test_libsvm(self):
        out, _ = run("synth", "--n", "10", "--seed", "2")
        lines = out.splitlines()
        self.assertEqual(len(lines), 10)
        self.assertTrue(all(line.split()[0] in ("1", "-1") for line in lines))

    def test_spheroids_as_csv(self):
        out, _ = run("synth", "--synthetic", "dynamic-spheroids", "--n", "10", "--format", "csv")
        rows = out.splitlines()
        self.assertEqual(len(rows), 10)
        self.assertTrue(all(len(row.split(",")) == 3 for row in rows))

    def test_odd_spheroid_count(self):
        with self.assertRaisesMessage(CommandError, "even --n"):
            run("synth", "--synthetic", "dynamic-spheroids", "--n", "11")


class BoundCommandTests(SimpleTestCase):
    def test_approx(self):
        out, _ = run("approx", "--n", "60", "--rank", "3", "--budget", "6", "--window", "20")
        record, summary = json_lines(out)
        self.assertEqual(record["n"], 60)
        self.assertGreaterEqual(record["windowed_mismatch"], 0.0)
        self.assertGreaterEqual(record["mismatch"], 0.0)
        self.assertEqual(summary["summary"]["window"], 20)

    def test_check_bounds(self):
        out, _ = run("check_bounds", "--n", "100", "--rank", "4", "--budget", "8")
        lines = json_lines(out)
        self.assertEqual([rec["name"] for rec in lines[:-1]], ["kernel_approximation", "ridge_stability"])
        self.assertTrue(all(rec["holds"] for rec in lines[:-1]))
        self.assertTrue(lines[-1]["summary"]["holds"])

    def test_check_bounds_cap(self):
        with self.assertRaisesMessage(CommandError, "capped at N=50"):
            run("check_bounds", "--n", "100", "--cap", "50")

    def test_violation_exit_code(self):
        outs = RunOutputs(summary={"violated": ["ridge_stability"]}, lines=1, exit_code=3)
        with mock.patch("runs.cli.execute", return_value=outs):
            with self.assertRaises(CommandError) as ctx:
                run("check_bounds", "--n", "10")
        self.assertEqual(ctx.exception.returncode, 3)
        self.assertIn("ridge_stability", str(ctx.exception))


class RecordedRunTests(TempDirMixin, TestCase):
    def test_sync_success(self):
        out, err = run("track", "--n", "30", "--rank", "2", "--record")
        rec = Run.objects.get()
        self.assertEqual(rec.state, "SUCCESS")
        self.assertEqual(rec.command, "track")
        self.assertEqual(rec.summary["n"], 30)
        self.assertIsNotNone(rec.finished_at)
        self.assertEqual(len(out.splitlines()), 31)
        self.assertIn(f"run #{rec.pk} recorded", err)

    def test_sync_failure(self):
        path = self.write("bad.libsvm", "1 1:1\nnope\n")
        with self.assertRaises(CommandError):
            run("track", "--input", path, "--dim", "3", "--record")
        rec = Run.objects.get()
        self.assertEqual(rec.state, "FAILURE")
        self.assertIn("line 2", rec.error)

    def test_finished_run_is_not_repeated(self):
        run("track", "--n", "10", "--rank", "2", "--record")
        rec = Run.objects.get()
        self.assertIsNone(execute_run_task(rec.pk))

    @override_settings(OKFEB_USE_ASYNC=True)
    def test_async_dispatch(self):
        path = os.path.join(self.tmp, "out.jsonl")
        with mock.patch("runs.tasks.execute_run_task") as task:
            run("track", "--n", "10", "--record", "--output", path)
        rec = Run.objects.get()
        task.delay.assert_called_once_with(rec.pk)
        self.assertEqual(rec.state, "PENDING")

    @override_settings(OKFEB_USE_ASYNC=True)
    def test_async_needs_output_path(self):
        with self.assertRaisesMessage(CommandError, "async runs need an output path"):
            run("track", "--n", "10", "--record")
