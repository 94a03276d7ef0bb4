"""
Shared plumbing for the okfeb management commands: common flags, config
building, output handling and the single-line error contract.
"""

from contextlib import contextmanager

from django.core.management.base import BaseCommand, CommandError

from commons.exceptions import OkfebError

from .logic import EXIT_BOUND_VIOLATED, PRESETS, build_config, execute
from .models import Run
from .tasks_utils import enqueue_run


class OkfebCommand(BaseCommand):
    command_name = ""
    reads_input = True
    learner_options = False
    bound_options = False

    def add_arguments(self, parser):
        # data
        if self.reads_input:
            parser.add_argument("--input", "-i", dest="path", help="LIBSVM/CSV file, '-' for stdin")
            parser.add_argument("--format", dest="input_format", choices=["libsvm", "csv"], default="libsvm")
            parser.add_argument("--dim", type=int, help="input dimension D")
            parser.add_argument("--unlabeled", action="store_true", help="CSV rows carry no label")
            parser.add_argument("--shuffle", action="store_true", default=None)
            parser.add_argument("--standardize", choices=["two_pass", "running"])
            parser.add_argument("--dataset", choices=sorted(PRESETS), help="parameter preset")
        parser.add_argument("--synthetic", choices=["two-spheres", "dynamic-spheroids"], default="two-spheres")
        parser.add_argument("--n", type=int, help="synthetic sample count")
        parser.add_argument("--sigma", type=float, help="two-spheres noise")
        parser.add_argument("--seed", type=int, help="overridden by OKFEB_SEED")
        parser.add_argument("--output", "-o", help="output file (default stdout)")
        parser.add_argument("--record", action="store_true", help="persist the run and execute it via enqueue_run")
        if not self.reads_input:
            return

        # kernel / subspace / budget
        parser.add_argument("--kernel", choices=["gaussian", "polynomial", "linear"])
        parser.add_argument("--gamma", type=float)
        parser.add_argument("--degree", type=int)
        parser.add_argument("--offset", type=float)
        parser.add_argument("--rank", "-r", type=int)
        parser.add_argument("--budget", "-B", type=int, help="max support vectors (unbounded when omitted)")
        parser.add_argument("--lambda", dest="lam", type=float)
        parser.add_argument("--beta", type=float, help="forgetting factor in (0, 1]")
        parser.add_argument("--epsilon", help="censoring threshold, or 'auto'")
        parser.add_argument("--target-rate", dest="target_rate", type=float)
        parser.add_argument("--step", choices=["harmonic", "harmonic_sq", "inv_feature_norm", "constant"])
        parser.add_argument("--step-scale", dest="step_scale", type=float)
        parser.add_argument("--removal", choices=["recency_min_norm", "brute_force", "fifo"])
        parser.add_argument("--init", choices=["ones", "random", "kpca"])
        parser.add_argument("--warmup", type=int, help="kpca warm-up block size (default: rank)")

        # output
        parser.add_argument("--csv", action="store_true", default=None, help="CSV metrics instead of JSON lines")
        parser.add_argument("--cadence", type=int, help="emit every k-th sample")
        parser.add_argument("--window", type=int, help="sliding window length for kernel mismatch")
        parser.add_argument("--segments", help="segment boundaries for the summary, e.g. 1000")
        parser.add_argument("--timing", action="store_true", default=None, help="add elapsed_ns (non-deterministic)")

        if self.learner_options:
            parser.add_argument("--features", choices=["okfeb", "raw"])
            parser.add_argument("-C", dest="C", type=float, help="Pegasos C (lambda_p = 1/C)")
            parser.add_argument("--lambda-reg", dest="lambda_reg", type=float)
            parser.add_argument("--lms-mu", dest="lms_mu", type=float)
            parser.add_argument("--whiten", dest="whiten", action="store_true", default=None, help="whiten features ahead of the learner")
            parser.add_argument("--no-whiten", dest="whiten", action="store_false", default=None, help="feed the learner raw extracted features")
        if self.bound_options:
            parser.add_argument("--ridge-lambda", dest="ridge_lambda", type=float)
            parser.add_argument("--cap", type=int, help="max N (quadratic memory)")

    def options_to_config(self, options: dict) -> dict:
        data = dict(options)
        if data.get("path"):
            data["source"] = data.pop("input_format")
        else:
            data["source"] = data.get("synthetic")
        if data.get("unlabeled"):
            data["labeled"] = False
        data["dim"] = data.get("dim")
        return data

    @contextmanager
    def _output(self, path):
        if not path or path == "-":
            yield self.stdout
        else:
            with open(path, "w", encoding="utf-8") as fh:
                yield fh

    def handle(self, *args, **options):
        try:
            cfg = build_config(self.command_name, self.options_to_config(options))
            if options.get("record"):
                outs = self._record(cfg, options.get("output"))
            else:
                with self._output(options.get("output")) as out:
                    outs = execute(cfg, out, self.stderr)
        except CommandError:
            raise
        except OkfebError as e:
            raise CommandError(_one_line(f"{e.kind}: {e}"))
        except OSError as e:
            raise CommandError(_one_line(f"io: {e}"))
        if outs is not None and outs.exit_code == EXIT_BOUND_VIOLATED:
            raise CommandError(
                f"bound violated: {', '.join(outs.summary.get('violated', []))}",
                returncode=EXIT_BOUND_VIOLATED,
            )

    def _record(self, cfg, output_path):
        run = Run.objects.create(command=cfg.command, config=cfg.to_dict(), output_path=output_path or "")
        self.stderr.write(f"run #{run.pk} recorded")
        result = enqueue_run(run.pk, out=self.stdout, err=self.stderr)
        # async -> AsyncResult, nothing to report yet
        return result if hasattr(result, "exit_code") else None


def _one_line(message: str) -> str:
    return " ".join(str(message).split())
