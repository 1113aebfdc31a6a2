"""
Exception hierarchy for WedgeLab
"""

from typing import Any, List, Optional


class WedgeLabError(Exception):
    """Base class for all WedgeLab errors"""


# =========================
# Scattering-function documents
# =========================
class SpecError(WedgeLabError, ValueError):
    """Invalid scattering-function document"""


class SpecSyntaxError(SpecError):
    """Document is not well-formed JSON"""

    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"{message} (line {line}, column {column})")
        self.line = line
        self.column = column


class SpecSemanticError(SpecError):
    """Document parses but violates a family constraint"""


# =========================
# Scattering functions
# =========================
class ScatteringFunctionError(WedgeLabError, ValueError):
    """Scattering function is not valid"""


class PoleProximityError(ScatteringFunctionError):
    """Evaluation point too close to a pole of the continuation"""

    def __init__(self, point: complex, pole: complex):
        super().__init__(f"rapidity {point} lies within tolerance of pole {pole}")
        self.point = point
        self.pole = pole


class RegularityError(ScatteringFunctionError):
    """Boundary sup diverges or strip width not admissible"""


class PhaseUnwrapError(WedgeLabError, RuntimeError):
    """Phase continuation hit a zero of S2"""


# =========================
# Fock space
# =========================
class GridError(WedgeLabError, ValueError):
    """Rapidity grid violates its invariants"""


class SizeMismatchError(WedgeLabError, ValueError):
    """Tensor, permutation or grid sizes disagree"""


class TruncationError(WedgeLabError, RuntimeError):
    """Operation would push amplitude above the truncation level"""


# =========================
# Form factors
# =========================
class MalformedContractionError(WedgeLabError, ValueError):
    """Contraction violates the pairing rules of C_{n,k}"""


# =========================
# Nuclearity
# =========================
class ParameterRangeError(WedgeLabError, ValueError):
    """Parameter outside its admissible interval"""


class ConvergenceError(WedgeLabError, RuntimeError):
    """Refinement did not reach the requested tolerance"""

    def __init__(self, message: str, history: Optional[List[Any]] = None):
        super().__init__(message)
        self.history = list(history or [])


class BracketError(WedgeLabError, RuntimeError):
    """Threshold not bracketed inside the search range"""


class ModeError(WedgeLabError, ValueError):
    """Series mode incompatible with the sign class"""


# =========================
# Scattering theory
# =========================
class PrecedenceError(WedgeLabError, ValueError):
    """Wavefunctions are not ordered by support"""


class SymmetryError(WedgeLabError, ValueError):
    """Input tensor is not totally symmetric"""


# =========================
# Configuration
# =========================
class ConfigurationError(WedgeLabError, ValueError):
    """Invalid settings or run configuration"""
