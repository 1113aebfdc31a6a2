"""
Helper utilities for WedgeLab
"""

import itertools
import json
import math
import re
from typing import Any, Dict, Iterable, List, Sequence, Tuple

import numpy as np


Permutation = Tuple[int, ...]

# plain decimals only: no exponent, no leading plus
_NUM = r"\d+(?:\.\d+)?"
_COMPLEX_RE = re.compile(
    rf"^(?:(?P<re>-?{_NUM})(?P<im>[-+]{_NUM})i"
    rf"|(?P<imonly>-?{_NUM})i"
    rf"|(?P<reonly>-?{_NUM}))$"
)


# =========================
# Parsing and formatting
# =========================
def parse_complex(text: str) -> complex:
    """Parse 'a+bi', 'bi' or 'a' into a complex number"""
    match = _COMPLEX_RE.match(text.strip())
    if match is None:
        raise ValueError(f"not a complex literal: {text!r}")
    if match.group("re") is not None:
        return complex(float(match.group("re")), float(match.group("im")))
    if match.group("imonly") is not None:
        return complex(0.0, float(match.group("imonly")))
    return complex(float(match.group("reonly")), 0.0)


def _decimal(x: float) -> str:
    # shortest round-tripping digits, never in exponent form
    return np.format_float_positional(x, unique=True, trim="-")


def format_complex(value: complex) -> str:
    """Format a complex number in the spec-file grammar"""
    value = complex(value)
    if value.imag == 0:
        return _decimal(value.real)
    if value.real == 0:
        return f"{_decimal(value.imag)}i"
    sign = "+" if value.imag >= 0 else "-"
    return f"{_decimal(value.real)}{sign}{_decimal(abs(value.imag))}i"


def complex_pair(value: complex) -> List[float]:
    """Serialize a complex number as [re, im]"""
    value = complex(value)
    return [float(value.real), float(value.imag)]


def parse_float_list(text: str) -> List[float]:
    """Parse a comma separated list of floats"""
    return [float(x.strip()) for x in text.split(",") if x.strip()]


def parse_grid(text: str) -> Tuple[int, float, float]:
    """Parse 'd,min,max'"""
    parts = [x.strip() for x in text.split(",")]
    if len(parts) != 3:
        raise ValueError(f"grid must be 'd,min,max', got {text!r}")
    return int(parts[0]), float(parts[1]), float(parts[2])


def format_log10(log10_value: float, digits: int = 9) -> str:
    """Format 10**log10_value as scientific text without overflowing"""
    exponent = math.floor(log10_value)
    mantissa = 10 ** (log10_value - exponent)
    if round(mantissa, digits) >= 10:
        mantissa /= 10
        exponent += 1
    return f"{mantissa:.{digits}f}e{exponent:+d}"


def _builtin(value: Any) -> Any:
    if isinstance(value, np.generic):
        return value.item()
    raise TypeError(f"{type(value).__name__} is not JSON serializable")


def dump_json(data: Dict[str, Any]) -> str:
    """Deterministic JSON text"""
    return json.dumps(data, indent=2, allow_nan=False, default=_builtin) + "\n"


# =========================
# Permutations (0-based tuples, rho[m] = image of m)
# =========================
def identity_permutation(n: int) -> Permutation:
    return tuple(range(n))


def total_inversion(n: int) -> Permutation:
    """The permutation m -> n-1-m"""
    return tuple(range(n - 1, -1, -1))


def compose(rho: Sequence[int], sigma: Sequence[int]) -> Permutation:
    """(rho sigma)[m] = rho[sigma[m]]"""
    return tuple(rho[s] for s in sigma)


def invert(rho: Sequence[int]) -> Permutation:
    return tuple(int(x) for x in np.argsort(rho))


def is_permutation(rho: Sequence[int], n: int) -> bool:
    return len(rho) == n and sorted(rho) == list(range(n))


def inversions(rho: Sequence[int]) -> List[Tuple[int, int]]:
    """Position pairs (l, k), l < k, with rho[l] > rho[k]"""
    n = len(rho)
    return [(l, k) for l in range(n) for k in range(l + 1, n) if rho[l] > rho[k]]


def all_permutations(n: int) -> List[Permutation]:
    """All permutations in lexicographic order"""
    return list(itertools.permutations(range(n)))


def sorting_permutation(values: Sequence[float]) -> Permutation:
    """Stable sort order: values[pi[0]] <= values[pi[1]] <= ..."""
    return tuple(int(x) for x in np.argsort(np.asarray(values), kind="stable"))


# =========================
# Tensor helpers
# =========================
def pair_tensor(matrix: np.ndarray, a: int, b: int, n: int) -> np.ndarray:
    """Broadcast matrix[i_a, i_b] over an n-index tensor (0-based axes)"""
    d = matrix.shape[0]
    if a == b:
        raise ValueError("pair axes must differ")
    shape = [1] * n
    shape[a] = d
    shape[b] = d
    if a < b:
        return matrix.reshape(shape)
    return matrix.T.reshape(shape)


def weakly_increasing_tuples(d: int, n: int) -> Iterable[Tuple[int, ...]]:
    return itertools.combinations_with_replacement(range(d), n)


def numerical_rank(matrix: np.ndarray, threshold: float) -> int:
    """Rank from singular values relative to the largest one"""
    if matrix.size == 0:
        return 0
    singular = np.linalg.svd(matrix, compute_uv=False)
    if singular[0] == 0:
        return 0
    return int(np.sum(singular > threshold * singular[0]))


def max_abs(values: Any) -> float:
    arr = np.asarray(values)
    return float(np.max(np.abs(arr))) if arr.size else 0.0
