import logging

from django import forms

from budget.logic import REMOVAL_RULES
from datasets.logic import SOURCES
from kernels.logic import FAMILIES
from subspace.logic import INIT_MODES, STEP_MODES

logger = logging.getLogger(__name__)

COMMANDS = ("synth", "track", "approx", "classify", "regress", "check_bounds")


def _choices(values):
    return [(v, v) for v in values]


class RunConfigForm(forms.Form):
    """Validates merged CLI options (defaults <- preset <- explicit flags)."""

    command = forms.ChoiceField(choices=_choices(COMMANDS))

    # data
    source = forms.ChoiceField(choices=_choices(SOURCES))
    path = forms.CharField(required=False)
    dim = forms.IntegerField(min_value=1, required=False)
    labeled = forms.BooleanField(required=False)
    n = forms.IntegerField(min_value=0)
    sigma = forms.FloatField(min_value=0)
    shuffle = forms.BooleanField(required=False)
    standardize = forms.ChoiceField(choices=[("", "none"), ("two_pass", "two_pass"), ("running", "running")], required=False)
    synth_format = forms.ChoiceField(choices=_choices(("libsvm", "csv")))

    # kernel
    kernel = forms.ChoiceField(choices=_choices(FAMILIES))
    gamma = forms.FloatField()
    degree = forms.IntegerField(min_value=1)
    offset = forms.FloatField(min_value=0)

    # subspace / budget
    rank = forms.IntegerField(min_value=1)
    budget = forms.IntegerField(min_value=1, required=False)
    lam = forms.FloatField(min_value=0)
    beta = forms.FloatField()
    epsilon = forms.CharField()
    target_rate = forms.FloatField()
    step = forms.ChoiceField(choices=_choices(STEP_MODES))
    step_scale = forms.FloatField()
    removal = forms.ChoiceField(choices=_choices(REMOVAL_RULES))
    init = forms.ChoiceField(choices=_choices(INIT_MODES))
    warmup = forms.IntegerField(min_value=1, required=False)
    seed = forms.IntegerField(min_value=0)

    # learners / bounds
    features = forms.ChoiceField(choices=_choices(("okfeb", "raw")))
    C = forms.FloatField()
    lambda_reg = forms.FloatField(min_value=0)
    lms_mu = forms.FloatField(required=False)
    whiten = forms.BooleanField(required=False)
    ridge_lambda = forms.FloatField()
    cap = forms.IntegerField(min_value=1)

    # output
    window = forms.IntegerField(min_value=1, required=False)
    cadence = forms.IntegerField(min_value=1)
    segments = forms.CharField(required=False)
    timing = forms.BooleanField(required=False)
    csv = forms.BooleanField(required=False)

    def clean_epsilon(self):
        raw = str(self.cleaned_data["epsilon"]).strip().lower()
        if raw == "auto":
            return raw
        try:
            value = float(raw)
        except ValueError:
            raise forms.ValidationError("must be a number >= 0 or 'auto'")
        if value < 0:
            raise forms.ValidationError("must be >= 0")
        return value

    def clean_segments(self):
        raw = (self.cleaned_data.get("segments") or "").strip()
        if not raw:
            return ()
        try:
            bounds = tuple(int(tok) for tok in raw.split(","))
        except ValueError:
            raise forms.ValidationError("comma-separated sample counts expected")
        if any(b < 1 for b in bounds) or list(bounds) != sorted(set(bounds)):
            raise forms.ValidationError("boundaries must be positive and strictly increasing")
        return bounds

    def clean(self):
        cleaned = super().clean()
        source = cleaned.get("source")
        command = cleaned.get("command")

        if source in ("libsvm", "csv") and not cleaned.get("path"):
            raise forms.ValidationError(f"{source} input needs --input (use '-' for stdin)")
        if source == "libsvm" and not cleaned.get("dim"):
            raise forms.ValidationError("libsvm input needs --dim")
        if command == "synth" and source not in ("two-spheres", "dynamic-spheroids"):
            raise forms.ValidationError("synth generates two-spheres or dynamic-spheroids only")
        if source == "dynamic-spheroids" and cleaned.get("n", 0) % 2:
            raise forms.ValidationError("dynamic-spheroids needs an even --n")
        if cleaned.get("kernel") == "gaussian" and not (cleaned.get("gamma") or 0) > 0:
            raise forms.ValidationError("gaussian kernel needs --gamma > 0")
        beta = cleaned.get("beta")
        if beta is not None and not 0 < beta <= 1:
            raise forms.ValidationError("--beta must be in (0, 1]")
        target = cleaned.get("target_rate")
        if target is not None and not 0 < target <= 1:
            raise forms.ValidationError("--target-rate must be in (0, 1]")
        for name in ("step_scale", "C", "ridge_lambda"):
            value = cleaned.get(name)
            if value is not None and not value > 0:
                raise forms.ValidationError(f"--{name.replace('_', '-')} must be > 0")
        if cleaned.get("lms_mu") is not None and not cleaned["lms_mu"] > 0:
            raise forms.ValidationError("--lms-mu must be > 0")
        if command in ("classify", "regress", "check_bounds") and source == "dynamic-spheroids":
            raise forms.ValidationError(f"{command} needs labeled samples")
        if command in ("classify", "regress") and source in ("libsvm", "csv") and not cleaned.get("labeled", True):
            raise forms.ValidationError(f"{command} needs labeled samples")

        rank, budget = cleaned.get("rank"), cleaned.get("budget")
        warmup = cleaned.get("warmup")
        if warmup is not None and cleaned.get("init") != "kpca":
            raise forms.ValidationError("--warmup needs --init kpca")
        if cleaned.get("init") == "kpca" and rank:
            block = warmup or rank
            if block < rank:
                raise forms.ValidationError(f"--warmup must be >= --rank ({rank})")
            if budget and block > budget:
                raise forms.ValidationError(f"the kpca warm-up block ({block}) exceeds --budget ({budget})")
        if rank and budget and budget < 1.5 * rank:
            logger.warning("budget B=%d is below 1.5 r (r=%d); tracking may be unstable", budget, rank)
        return cleaned

    def error_line(self) -> str:
        parts = []
        for field, errors in self.errors.items():
            message = " ".join(str(e) for e in errors)
            parts.append(message if field == "__all__" else f"--{field.replace('_', '-')}: {message}")
        return "; ".join(parts)
