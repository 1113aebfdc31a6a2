"""
Discrete S2-symmetric Fock space over a rapidity grid

Sector n holds a tensor of shape (d,)*n. The continuum delta is replaced by
the Kronecker delta on modes, so the ZF relations and the projector
identities hold exactly up to roundoff.
"""

import math
from functools import lru_cache
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from core.errors import SizeMismatchError, TruncationError
from core.logging import get_logger
from core.models import (
    ClosedFormVector,
    Family,
    FockVector,
    RapidityGrid,
    ScatteringFunction,
    SectorTensor,
)
from services.scatfn import phase_shift, sign_class
from utils.helpers import all_permutations, inversions, invert, is_permutation, max_abs, pair_tensor

logger = get_logger("fock")


# =========================
# Permutation action
# =========================
def pair_matrix(s2: ScatteringFunction, grid: RapidityGrid) -> np.ndarray:
    """S[x, y] = S2(theta_x - theta_y)"""
    diff = grid.nodes[:, None] - grid.nodes[None, :]
    return s2.evaluate(diff)


def srho_tensor(s2: ScatteringFunction, rho: Sequence[int], grid: RapidityGrid,
                pairs: Optional[np.ndarray] = None) -> np.ndarray:
    """S^rho at every grid tuple"""
    n = len(rho)
    pairs = pair_matrix(s2, grid) if pairs is None else pairs
    result = np.ones((grid.d,) * n, dtype=complex)
    for l, k in inversions(rho):
        result = result * pair_tensor(pairs, rho[l], rho[k], n)
    return result


def dn_apply(s2: ScatteringFunction, rho: Sequence[int], t: SectorTensor) -> SectorTensor:
    """(D_n(rho) t)(I) = S^rho(theta_I) t(i_rho(0), ..., i_rho(n-1))"""
    if not is_permutation(rho, t.n):
        raise SizeMismatchError(f"{tuple(rho)} is not a permutation of {t.n} positions")
    if t.n < 2:
        return t.with_amplitudes(t.amplitudes.copy())
    permuted = np.transpose(t.amplitudes, invert(rho))
    return t.with_amplitudes(srho_tensor(s2, rho, t.grid) * permuted)


def pn_project(s2: ScatteringFunction, t: SectorTensor) -> SectorTensor:
    """Mean of D_n(rho) over all permutations, summed in lexicographic order"""
    if t.n < 2:
        return t.with_amplitudes(t.amplitudes.copy())
    pairs = pair_matrix(s2, t.grid)
    total = np.zeros_like(t.amplitudes)
    for rho in all_permutations(t.n):
        total = total + srho_tensor(s2, rho, t.grid, pairs) * np.transpose(t.amplitudes, invert(rho))
    return t.with_amplitudes(total / math.factorial(t.n))


def exchange_residual(s2: ScatteringFunction, t: SectorTensor) -> float:
    """max |t(.., i_{j+1}, i_j, ..) - S2(theta_{i_j} - theta_{i_{j+1}}) t(.., i_j, i_{j+1}, ..)|"""
    pairs = pair_matrix(s2, t.grid)
    worst = 0.0
    for j in range(t.n - 1):
        swapped = np.swapaxes(t.amplitudes, j, j + 1)
        worst = max(worst, max_abs(swapped - pair_tensor(pairs, j, j + 1, t.n) * t.amplitudes))
    return worst


@lru_cache(maxsize=64)
def projector_matrix(s2: ScatteringFunction, grid: RapidityGrid, n: int) -> np.ndarray:
    """Dense P_n acting on row-major flattened sector tensors"""
    d = grid.d
    size = d ** n
    if n < 2:
        matrix = np.eye(size, dtype=complex)
        matrix.setflags(write=False)
        return matrix
    pairs = pair_matrix(s2, grid)
    base = np.arange(size).reshape((d,) * n)
    rows = np.arange(size)
    matrix = np.zeros((size, size), dtype=complex)
    for rho in all_permutations(n):
        columns = np.transpose(base, invert(rho)).ravel()
        matrix[rows, columns] += srho_tensor(s2, rho, grid, pairs).ravel()
    matrix /= math.factorial(n)
    matrix.setflags(write=False)
    return matrix


def symmetric_state(s2: ScatteringFunction, grid: RapidityGrid, indices: Sequence[int]) -> np.ndarray:
    """z+_{a_1} ... z+_{a_m} Omega = sqrt(m!) P_m (e_{a_1} x ... x e_{a_m}), flattened"""
    m = len(indices)
    if m == 0:
        return np.ones(1, dtype=complex)
    flat = int(np.ravel_multi_index(tuple(indices), (grid.d,) * m))
    return math.sqrt(math.factorial(m)) * projector_matrix(s2, grid, m)[:, flat]


# =========================
# Truncated Fock space
# =========================
class FockSpace:
    """Dense operators on sectors 0..n_max"""

    def __init__(self, s2: ScatteringFunction, grid: RapidityGrid, n_max: int):
        if n_max < 0:
            raise ValueError("n_max must be non-negative")
        self.s2 = s2
        self.grid = grid
        self.n_max = n_max
        self._offsets = np.cumsum([0] + [grid.d ** n for n in range(n_max + 1)])
        self._modes = {}
        self._projector: Optional[np.ndarray] = None

    @property
    def dim(self) -> int:
        return int(self._offsets[-1])

    def block(self, n: int) -> slice:
        return slice(int(self._offsets[n]), int(self._offsets[n + 1]))

    def projector(self, n: int) -> np.ndarray:
        return projector_matrix(self.s2, self.grid, n)

    def projector_full(self) -> np.ndarray:
        if self._projector is None:
            matrix = np.zeros((self.dim, self.dim), dtype=complex)
            for n in range(self.n_max + 1):
                matrix[self.block(n), self.block(n)] = self.projector(n)
            matrix.setflags(write=False)
            self._projector = matrix
        return self._projector

    def project(self, x: np.ndarray) -> np.ndarray:
        """P x, sector by sector"""
        return self.projector_full() @ np.asarray(x, dtype=complex)

    def random_physical(self, rng: np.random.Generator, guard: int = 1) -> FockVector:
        """Random vector in the image of P with the top `guard` sectors empty"""
        vec = FockVector.random(rng, self.grid, self.n_max, guard)
        return FockVector.from_array(self.grid, self.n_max, self.project(vec.to_array()))

    def creation_matrix(self, psi: np.ndarray) -> np.ndarray:
        """z+(psi) with sector n_max mapped to zero"""
        psi = np.asarray(psi, dtype=complex)
        d = self.grid.d
        matrix = np.zeros((self.dim, self.dim), dtype=complex)
        for n in range(1, self.n_max + 1):
            lift = np.kron(psi[:, None], np.eye(d ** (n - 1)))
            matrix[self.block(n), self.block(n - 1)] = math.sqrt(n) * self.projector(n) @ lift
        return matrix

    def annihilation_matrix(self, psi: np.ndarray) -> np.ndarray:
        """z(psi) = z+(conj psi)*"""
        return self.creation_matrix(np.conj(np.asarray(psi, dtype=complex))).conj().T

    def mode_creation(self, j: int) -> np.ndarray:
        if j not in self._modes:
            e = np.zeros(self.grid.d, dtype=complex)
            e[j] = 1.0
            matrix = self.creation_matrix(e)
            matrix.setflags(write=False)
            self._modes[j] = matrix
        return self._modes[j]

    def mode_annihilation(self, j: int) -> np.ndarray:
        return self.mode_creation(j).conj().T

    def number_matrix(self) -> np.ndarray:
        diag = np.concatenate([np.full(self.grid.d ** n, float(n)) for n in range(self.n_max + 1)])
        return np.diag(diag).astype(complex)

    def embed(self, n: int, columns: np.ndarray) -> np.ndarray:
        """Place sector-n column vectors into the full space"""
        columns = np.asarray(columns, dtype=complex)
        if columns.ndim == 1:
            columns = columns[:, None]
        full = np.zeros((self.dim, columns.shape[1]), dtype=complex)
        full[self.block(n)] = columns
        return full


def zf_exchange_residuals(space: FockSpace, x: np.ndarray) -> Tuple[float, float, float]:
    """Mode-form ZF relations applied to P x (top two sectors of x empty):
    z_i z+_j - S2(theta_j - theta_i) z+_j z_i - delta_ij,
    z+_i z+_j - S2(theta_i - theta_j) z+_j z+_i,
    z_i z_j - S2(theta_i - theta_j) z_j z_i

    The delta term acts on all of x while z and z+ only see P x, so x is
    projected first.
    """
    x = space.project(x)
    pairs = pair_matrix(space.s2, space.grid)
    d = space.grid.d
    created = [space.mode_creation(j) @ x for j in range(d)]
    removed = [space.mode_annihilation(j) @ x for j in range(d)]
    mixed = cc = aa = 0.0
    for i in range(d):
        for j in range(d):
            delta = x if i == j else 0.0
            lhs = space.mode_annihilation(i) @ created[j]
            rhs = pairs[j, i] * (space.mode_creation(j) @ removed[i]) + delta
            mixed = max(mixed, max_abs(lhs - rhs))
            lhs = space.mode_creation(i) @ created[j]
            cc = max(cc, max_abs(lhs - pairs[i, j] * (space.mode_creation(j) @ created[i])))
            lhs = space.mode_annihilation(i) @ removed[j]
            aa = max(aa, max_abs(lhs - pairs[i, j] * (space.mode_annihilation(j) @ removed[i])))
    return mixed, cc, aa


# =========================
# Operators on Fock vectors
# =========================
def _raise_guard(vec: FockVector, strict: bool) -> bool:
    if vec.top_is_empty():
        return False
    if strict:
        raise TruncationError(f"sector {vec.n_max} is occupied; raising would leave the truncated space")
    logger.warning("truncating sector %d above n_max", vec.n_max + 1)
    return True


def zf_create(s2: ScatteringFunction, psi: np.ndarray, vec: FockVector,
              strict: bool = True) -> FockVector:
    """(z+(psi) Phi)_n = sqrt(n) P_n (psi x Phi_{n-1})"""
    if vec.n_max < 1:
        raise TruncationError("creation needs n_max >= 1")
    psi = np.asarray(psi, dtype=complex)
    if psi.shape != (vec.grid.d,):
        raise SizeMismatchError("one-particle vector does not match the grid")
    truncated = _raise_guard(vec, strict)
    out = FockVector.zeros(vec.grid, vec.n_max)
    for n in range(1, vec.n_max + 1):
        lifted = np.multiply.outer(psi, vec.sector(n - 1)).ravel()
        amplitudes = math.sqrt(n) * (projector_matrix(s2, vec.grid, n) @ lifted)
        out.sectors[n] = SectorTensor(n, vec.grid, amplitudes)
    out.truncated = vec.truncated or truncated
    return out


def zf_annihilate(s2: ScatteringFunction, psi: np.ndarray, vec: FockVector) -> FockVector:
    """(z(psi) Phi)_{n-1} = sqrt(n) sum_i psi_i (P_n Phi_n)(i, ...)"""
    psi = np.asarray(psi, dtype=complex)
    if psi.shape != (vec.grid.d,):
        raise SizeMismatchError("one-particle vector does not match the grid")
    d = vec.grid.d
    out = FockVector.zeros(vec.grid, vec.n_max)
    for n in range(1, vec.n_max + 1):
        projected = projector_matrix(s2, vec.grid, n) @ vec.sector(n).ravel()
        reduced = psi @ projected.reshape(d, d ** (n - 1))
        out.sectors[n - 1] = SectorTensor(n - 1, vec.grid, math.sqrt(n) * reduced)
    out.truncated = vec.truncated
    return out


def number_op(vec: FockVector) -> FockVector:
    return FockVector(vec.grid, [s.with_amplitudes(s.n * s.amplitudes) for s in vec.sectors],
                      vec.truncated)


def _product_phase(per_node: np.ndarray, n: int) -> np.ndarray:
    result = np.ones((), dtype=complex)
    for _ in range(n):
        result = np.multiply.outer(result, per_node)
    return result


def translate(x: Tuple[float, float], vec: FockVector) -> FockVector:
    """Multiply sector n by prod_k exp(i (m cosh theta x0 - m sinh theta x1))"""
    x0, x1 = float(x[0]), float(x[1])
    m, nodes = vec.grid.mass, vec.grid.nodes
    per_node = np.exp(1j * (m * np.cosh(nodes) * x0 - m * np.sinh(nodes) * x1))
    return FockVector(
        vec.grid,
        [s.with_amplitudes(_product_phase(per_node, s.n) * s.amplitudes) for s in vec.sectors],
        vec.truncated,
    )


def reflect(vec: FockVector) -> FockVector:
    """(J Psi)_n(theta_1..theta_n) = conj Psi_n(theta_n..theta_1)"""
    return FockVector(
        vec.grid,
        [s.with_amplitudes(np.conj(np.transpose(s.amplitudes, tuple(range(s.n - 1, -1, -1)))))
         for s in vec.sectors],
        vec.truncated,
    )


def field_apply(s2: ScatteringFunction, fplus: np.ndarray, fminus: np.ndarray, vec: FockVector,
                strict: bool = True) -> FockVector:
    """phi(f) = z+(f+) + z(f-)"""
    return zf_create(s2, fplus, vec, strict) + zf_annihilate(s2, fminus, vec)


def reflected_field_apply(s2: ScatteringFunction, fplus: np.ndarray, fminus: np.ndarray,
                          vec: FockVector, strict: bool = True) -> FockVector:
    """phi'(f) = J phi(f^j) J with (f^j)^pm = conj(f^pm)"""
    inner = field_apply(s2, np.conj(fplus), np.conj(fminus), reflect(vec), strict)
    return reflect(inner)


def xi_action(s: float, v: ClosedFormVector, eval_nodes: Union[Sequence[float], np.ndarray, RapidityGrid],
              mass: float = 1.0) -> SectorTensor:
    """prod_k exp(-m s cosh theta_k) * Psi_n(theta_1 - i pi/2, ..., theta_n - i pi/2) at eval_nodes

    A RapidityGrid may be passed instead of a node vector; its own mass is used then.
    """
    if not s > 0:
        raise ValueError("splitting distance s must be positive")
    grid = eval_nodes if isinstance(eval_nodes, RapidityGrid) else RapidityGrid(eval_nodes, mass=mass)
    damping = np.exp(-grid.mass * s * np.cosh(grid.nodes))
    continued = grid.nodes - 0.5j * math.pi
    result = np.ones((), dtype=complex)
    for factor in v.factors:
        result = np.multiply.outer(result, damping * factor(continued))
    return SectorTensor(v.n, grid, result)


# =========================
# Intertwiners
# =========================
def y_tensor(s2: ScatteringFunction, grid: RapidityGrid, n: int,
             sign: Optional[int] = None) -> np.ndarray:
    """Y_n at all grid tuples (real arguments)"""
    sign = sign_class(s2) if sign is None else sign
    d = grid.d
    phase = np.empty((d, d), dtype=complex)
    for a in range(d):
        for b in range(d):
            phase[a, b] = sign * np.exp(1j * phase_shift(s2, grid.nodes[a] - grid.nodes[b]))
    result = np.ones((d,) * n, dtype=complex)
    for k in range(n):
        for l in range(k + 1, n):
            result = result * pair_tensor(phase, k, l, n)
    return result


def intertwine_residual(s2: ScatteringFunction, t: SectorTensor, rho: Sequence[int],
                        sign: Optional[int] = None) -> float:
    """max |Y D_n(rho) t - D_n^pm(rho) Y t|"""
    sign = sign_class(s2) if sign is None else sign
    statistics = ScatteringFunction(family=Family.CONSTANT, value=sign)
    y = y_tensor(s2, t.grid, t.n, sign)
    left = y * dn_apply(s2, rho, t).amplitudes
    right = dn_apply(statistics, rho, t.with_amplitudes(y * t.amplitudes)).amplitudes
    return float(np.max(np.abs(left - right))) if left.size else 0.0


# =========================
# Plain symmetric tensors
# =========================
FREE = ScatteringFunction(family=Family.CONSTANT, value=1, name="free")


def symmetrize(t: SectorTensor) -> SectorTensor:
    """Plain Bose symmetrizer (P_n for S2 = 1)"""
    return pn_project(FREE, t)


def coincidence_mask(d: int, n: int) -> np.ndarray:
    """True on index tuples whose entries are pairwise distinct"""
    grids = np.indices((d,) * n).reshape(n, -1)
    distinct = np.array([len(set(column)) == n for column in grids.T])
    return distinct.reshape((d,) * n)


def random_symmetric(rng: np.random.Generator, grid: RapidityGrid, n: int,
                     exclude_coincident: bool = False) -> SectorTensor:
    shape = (grid.d,) * n
    raw = SectorTensor(n, grid, rng.standard_normal(shape) + 1j * rng.standard_normal(shape))
    result = symmetrize(raw)
    if exclude_coincident and n > 1:
        result = result.with_amplitudes(result.amplitudes * coincidence_mask(grid.d, n))
    return result
