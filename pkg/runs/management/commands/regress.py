from runs.cli import OkfebCommand


class Command(OkfebCommand):
    help = "Online LMS regression on OK-FEB features, predict-then-update MSE."
    command_name = "regress"
    learner_options = True
