"""Exception hierarchy shared by the library, the CLI and the HTTP router.

Every class carries the process exit code the CLI reports for it:
1 for user errors (bad input, refusals), 2 for numerical failures.
"""


class MnarError(Exception):
    exit_code = 2


class UserInputError(MnarError, ValueError):
    exit_code = 1


class SchemaError(UserInputError):
    """CSV or dataset contract violation."""


class ConfigError(UserInputError):
    """Malformed or inconsistent model configuration."""


class DegenerateMissingnessError(UserInputError):
    """Nothing is missing, or the missingness carries no information about beta."""


class IdentifiabilityRefusal(UserInputError):
    def __init__(self, verdict):
        self.verdict = verdict
        super().__init__(f"refusing to fit: model is {verdict.label}")


class NumericalError(MnarError, ArithmeticError):
    exit_code = 2


class DomainError(NumericalError, ValueError):
    """A value outside the domain of a model (non-finite predictor, y off support)."""


class IntegrationError(NumericalError):
    def __init__(self, message: str, node: float = None):
        self.node = node
        super().__init__(message if node is None else f"{message} (at y={node:.6g})")


class ConvergenceError(NumericalError):
    def __init__(self, message: str, residual: float = float("nan"), n_iter: int = 0):
        self.residual = residual
        self.n_iter = n_iter
        super().__init__(f"{message} (residual={residual:.3e}, iterations={n_iter})")


class FitError(NumericalError):
    """Model fitting failed (rank deficiency, too few observations)."""


class SeparationError(FitError):
    """Binary likelihood has no finite maximizer."""
