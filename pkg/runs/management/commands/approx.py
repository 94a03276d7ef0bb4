from runs.cli import OkfebCommand


class Command(OkfebCommand):
    help = "Windowed kernel-matrix mismatch (1/N)||K - K_hat||_F along the OK-FEB trajectory."
    command_name = "approx"
    bound_options = True
