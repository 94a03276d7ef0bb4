"""
Error hierarchy shared by every okfeb app.

Each class also derives from the closest builtin, so callers can catch
``ValueError`` / ``ArithmeticError`` without importing this module.
``kind`` is the short slug printed by the management commands.
"""


class OkfebError(Exception):
    kind = "error"


class InputError(OkfebError, ValueError):
    kind = "input"


class DimensionError(InputError):
    kind = "dimension"


class ParseError(InputError):
    kind = "parse"

    def __init__(self, line_no: int, message: str):
        self.line_no = line_no
        self.reason = message
        super().__init__(f"line {line_no}: {message}")


class ConfigError(InputError):
    kind = "config"


class PreconditionError(OkfebError, ValueError):
    kind = "precondition"


class NotPSDError(OkfebError, ValueError):
    kind = "not-psd"


class SingularityError(OkfebError, ArithmeticError):
    kind = "singular"


class DivergenceError(OkfebError, ArithmeticError):
    kind = "divergence"


class ConsistencyError(OkfebError, RuntimeError):
    kind = "consistency"
