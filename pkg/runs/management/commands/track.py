from runs.cli import OkfebCommand


class Command(OkfebCommand):
    help = "Track a kernel subspace over a stream with OK-FEB; one JSON metric line per sample."
    command_name = "track"
