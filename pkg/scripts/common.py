"""
Shared pieces for the lss tools: exception hierarchy, manifold/projection
defaults and resource lookup for the bundled scenario files.
"""

import os
import sys

# Points are accepted as "on M" below this sup-norm of the constraints
MANIFOLD_TOL = 1e-8
# Gauss-Newton projection stops here (or after PROJECTION_MAX_ITER steps)
PROJECTION_TOL = 1e-10
PROJECTION_MAX_ITER = 20
# Residual threshold for declaring a symmetry / constant of motion
SYMMETRY_TOL = 1e-8


def resource_path(relative_path):
    """Get absolute path to resource, works for dev and for PyInstaller"""
    try:
        # PyInstaller creates a temp folder and stores path in _MEIPASS
        base_path = sys._MEIPASS
    except Exception:
        base_path = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
    return os.path.join(base_path, relative_path)


def scenarios_dir():
    return resource_path('scenarios')


class LssError(Exception):
    """Base class for every error raised by the toolkit."""


class ExpressionError(LssError):
    pass


class ParseError(ExpressionError):
    """Malformed expression text; offset is a byte offset into the UTF-8 input."""

    def __init__(self, message, offset):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


class UndeclaredVariableError(ExpressionError):
    def __init__(self, name, offset=None):
        where = f" at offset {offset}" if offset is not None else ""
        super().__init__(f"undeclared variable '{name}'{where}")
        self.name = name
        self.offset = offset


class DomainError(ExpressionError):
    """Evaluation left the real domain (sqrt/log/pow arguments, division by zero)."""

    def __init__(self, message, subexpression):
        super().__init__(f"{message} in '{subexpression}'")
        self.subexpression = subexpression


class ShapeError(LssError):
    pass


class NotComplementaryError(LssError):
    pass


class BaseNotRegularError(LssError):
    pass


class FrameDegenerateError(LssError):
    pass


class InconsistentError(LssError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class NonUniqueError(LssError):
    pass


class MaxRankViolatedError(LssError):
    def __init__(self, message, point):
        super().__init__(f"{message} at point {list(point)}")
        self.point = point


class NotOnManifoldError(LssError):
    def __init__(self, violation):
        super().__init__(f"point is not on the constraint submanifold (|phi|_inf = {violation:.3e})")
        self.violation = violation


class NotInvertibleError(LssError):
    pass


class ProjectionDivergenceError(LssError):
    def __init__(self, message, step=None):
        where = f" (step {step})" if step is not None else ""
        super().__init__(f"{message}{where}")
        self.step = step


class SpecFileError(LssError):
    def __init__(self, message, section=None, line=None):
        parts = []
        if section:
            parts.append(f"[{section}]")
        if line is not None:
            parts.append(f"line {line}")
        prefix = " ".join(parts)
        super().__init__(f"{prefix}: {message}" if prefix else message)
        self.section = section
        self.line = line


class UsageError(LssError):
    """Bad command-line input (exit code 2)."""
