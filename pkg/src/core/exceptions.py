"""
Solver Exceptions
Error hierarchy shared by the block algebra, the solver and the CLI
"""

from typing import Any, Optional


class PDMMError(Exception):
    """Base class for all solver errors"""


class ConfigurationError(PDMMError, ValueError):
    """Invalid or unsupported solver / run configuration"""


class DimensionError(PDMMError, ValueError):
    """Block partitions do not conform"""


class ValidationError(PDMMError, ValueError):
    """Problem data violates a structural requirement"""


class NumericalError(PDMMError, ArithmeticError):
    """Factorization, SVD or linear solve failure"""

    def __init__(self, message: str, block: Optional[int] = None):
        if block is not None:
            message = f"block {block}: {message}"
        super().__init__(message)
        self.block = block


class DivergenceError(PDMMError):
    """Iterates left the bounded region; the partial trace is attached"""

    def __init__(self, message: str, trace: Any = None):
        super().__init__(message)
        self.trace = trace
