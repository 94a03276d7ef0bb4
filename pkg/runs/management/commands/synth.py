from runs.cli import OkfebCommand


class Command(OkfebCommand):
    help = "Generate a synthetic stream (two-spheres or dynamic-spheroids) as LIBSVM or CSV."
    command_name = "synth"
    reads_input = False

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument("--format", dest="synth_format", choices=["libsvm", "csv"])
