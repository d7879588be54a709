"""
Error types shared by every app.

Run-level errors carry the iteration they happened at and the partial trace
recorded so far, so the harness can flush what was computed before exiting.
"""


class OptimizationError(Exception):
    """Base class for all library errors"""

    def __init__(self, message, *, iteration=None, trace=None):
        super().__init__(message)
        self.iteration = iteration
        self.trace = trace

    def with_context(self, iteration=None, trace=None):
        """Attach run context without losing the original type"""
        if self.iteration is None:
            self.iteration = iteration
        if self.trace is None:
            self.trace = trace
        return self

    def __str__(self):
        message = super().__str__()
        if self.iteration is not None:
            return f'{message} (iteration {self.iteration})'
        return message


class InvalidInputError(OptimizationError, ValueError):
    """Dimension mismatch, non-finite values, asymmetric matrices"""


class ConfigError(OptimizationError, ValueError):
    """Experiment or method configuration outside the documented ranges"""


class IterationBudgetError(OptimizationError):
    """An iterative solver hit its cap before its stopping test passed"""

    def __init__(self, message, *, last_residual=None, **kwargs):
        super().__init__(message, **kwargs)
        self.last_residual = last_residual


class RegularizedSolveError(OptimizationError):
    """Cholesky factorization of H + lambda*I failed twice"""


class NonConvergenceError(OptimizationError):
    """The regularization search ran past the largest admissible lambda"""


class BisectionFailure(OptimizationError):
    """The MS bisection bracket left its admissible range"""


class DivergenceError(OptimizationError):
    """A method produced non-finite iterates"""


class AuditInputError(OptimizationError):
    """A trace is missing the fields an audit needs"""


class LibSVMParseError(OptimizationError, ValueError):
    """Malformed LIBSVM text"""

    def __init__(self, message, *, line_number=None, **kwargs):
        if line_number is not None:
            message = f'line {line_number}: {message}'
        super().__init__(message, **kwargs)
        self.line_number = line_number
