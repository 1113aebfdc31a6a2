"""
Collision states, Moller operators and the two-particle factorized S-matrix on the grid
"""

import itertools
import math
from typing import Sequence, Tuple, Union

import numpy as np

from core.config import DEFAULT_TOLERANCES, ToleranceConfig
from core.errors import SymmetryError
from core.logging import get_logger
from core.models import (
    Direction,
    OrderedWavefunctions,
    RapidityGrid,
    ScatteringFunction,
    SectorTensor,
)
from services.fock import pn_project, projector_matrix, symmetric_state, symmetrize
from services.scatfn import srho
from utils.helpers import (
    compose,
    max_abs,
    numerical_rank,
    pair_tensor,
    sorting_permutation,
    total_inversion,
    weakly_increasing_tuples,
)

logger = get_logger("scattering")

Wavefunctions = Union[OrderedWavefunctions, Sequence[np.ndarray]]


def check_precedence(wavefunctions: Sequence[np.ndarray],
                     threshold: float = DEFAULT_TOLERANCES.support_threshold) -> bool:
    """True iff the supports satisfy psi_1 < psi_2 < ... (max of one below min of the next)"""
    supports = [np.flatnonzero(np.abs(np.asarray(psi)) > threshold) for psi in wavefunctions]
    supports = [s for s in supports if s.size]
    return all(left.max() < right.min() for left, right in zip(supports, supports[1:]))


def _ordered(grid: RapidityGrid, wavefunctions: Wavefunctions) -> OrderedWavefunctions:
    if isinstance(wavefunctions, OrderedWavefunctions):
        return wavefunctions
    return OrderedWavefunctions(grid, list(wavefunctions))


def _collision_state(s2: ScatteringFunction, grid: RapidityGrid, factors: Sequence[np.ndarray]) -> SectorTensor:
    n = len(factors)
    product = np.ones((), dtype=complex)
    for psi in factors:
        product = np.multiply.outer(product, psi)
    projected = pn_project(s2, SectorTensor(n, grid, product))
    return projected.with_amplitudes(math.sqrt(math.factorial(n)) * projected.amplitudes)


def out_state(s2: ScatteringFunction, grid: RapidityGrid, wavefunctions: Wavefunctions) -> SectorTensor:
    """sqrt(n!) P_n (psi_1 x ... x psi_n)"""
    waves = _ordered(grid, wavefunctions)
    return _collision_state(s2, grid, waves.wavefunctions)


def in_state(s2: ScatteringFunction, grid: RapidityGrid, wavefunctions: Wavefunctions) -> SectorTensor:
    """sqrt(n!) P_n (psi_n x ... x psi_1)"""
    waves = _ordered(grid, wavefunctions)
    return _collision_state(s2, grid, waves.wavefunctions[::-1])


# =========================
# Moller operators
# =========================
def region_factor(s2: ScatteringFunction, grid: RapidityGrid, n: int, direction: Direction) -> np.ndarray:
    """S^pi (out) or S^(pi iota) (in), pi the stable sorting permutation of each index tuple"""
    direction = Direction(direction)
    iota = total_inversion(n)
    factor = np.ones((grid.d,) * n, dtype=complex)
    for indices in itertools.product(range(grid.d), repeat=n):
        pi = sorting_permutation(indices)
        rho = pi if direction is Direction.OUT else compose(pi, iota)
        factor[indices] = srho(s2, rho, grid.nodes[list(indices)])
    return factor


def _require_symmetric(phi: SectorTensor, tol: ToleranceConfig):
    scale = max(1.0, max_abs(phi.amplitudes))
    if max_abs(symmetrize(phi).amplitudes - phi.amplitudes) > tol.symmetric_input * scale:
        raise SymmetryError("input tensor is not totally symmetric")


def moller_apply(s2: ScatteringFunction, direction: Direction, phi: SectorTensor,
                 tol: ToleranceConfig = DEFAULT_TOLERANCES) -> SectorTensor:
    """V_out / V_in as multiplication operators on symmetric tensors"""
    _require_symmetric(phi, tol)
    return phi.with_amplitudes(region_factor(s2, phi.grid, phi.n, direction) * phi.amplitudes)


def moller_adjoint(s2: ScatteringFunction, direction: Direction, psi: SectorTensor) -> SectorTensor:
    return psi.with_amplitudes(np.conj(region_factor(s2, psi.grid, psi.n, direction)) * psi.amplitudes)


def s_matrix_factor(s2: ScatteringFunction, grid: RapidityGrid, n: int) -> np.ndarray:
    """prod_{l<k} S2(|theta_l - theta_k|)"""
    pairs = s2.evaluate(np.abs(grid.nodes[:, None] - grid.nodes[None, :]))
    factor = np.ones((grid.d,) * n, dtype=complex)
    for l in range(n):
        for k in range(l + 1, n):
            factor = factor * pair_tensor(pairs, l, k, n)
    return factor


def s_matrix_apply(s2: ScatteringFunction, phi: SectorTensor,
                   tol: ToleranceConfig = DEFAULT_TOLERANCES) -> SectorTensor:
    _require_symmetric(phi, tol)
    return phi.with_amplitudes(s_matrix_factor(s2, phi.grid, phi.n) * phi.amplitudes)


def s_matrix_bruteforce(s2: ScatteringFunction, phi: SectorTensor,
                        tol: ToleranceConfig = DEFAULT_TOLERANCES) -> SectorTensor:
    """V_out* V_in"""
    return moller_adjoint(s2, Direction.OUT, moller_apply(s2, Direction.IN, phi, tol))


def projection_defect(s2: ScatteringFunction, t: SectorTensor) -> float:
    """||(1 - P_n) t||"""
    return float(np.linalg.norm(t.amplitudes - pn_project(s2, t).amplitudes))


# =========================
# Completeness
# =========================
def completeness_rank(s2: ScatteringFunction, n: int, grid: RapidityGrid,
                      tol: ToleranceConfig = DEFAULT_TOLERANCES) -> Tuple[int, int]:
    """(rank of the out-state span over weakly ordered node tuples, rank P_n)"""
    columns = [symmetric_state(s2, grid, indices) for indices in weakly_increasing_tuples(grid.d, n)]
    span = np.stack(columns, axis=1)
    rank = numerical_rank(span, tol.rank_threshold)
    dim = numerical_rank(projector_matrix(s2, grid, n), tol.rank_threshold)
    logger.debug("%s: completeness n=%d d=%d rank=%d dim=%d", s2.label, n, grid.d, rank, dim)
    return rank, dim
