from runs.cli import OkfebCommand


class Command(OkfebCommand):
    help = (
        "Check the kernel-approximation and ridge-stability bounds on a finite sample. "
        "Exits with status 3 when a bound fails while its hypotheses hold."
    )
    command_name = "check_bounds"
    bound_options = True
