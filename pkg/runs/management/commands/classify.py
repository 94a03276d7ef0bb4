from runs.cli import OkfebCommand


class Command(OkfebCommand):
    help = "Online linear SVM (Pegasos) on OK-FEB features, predict-then-update accuracy."
    command_name = "classify"
    learner_options = True
