"""
Contraction calculus for contracted matrix elements of truncated-Fock operators

Positions are 1-based as in the contraction pairs. Matrix-element tensors are
indexed by the uncontracted positions in ascending order.
"""

import itertools
import math
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from core.errors import MalformedContractionError, TruncationError
from core.logging import get_logger
from core.models import (
    ClosedFormVector,
    Contraction,
    FockVector,
    GaussianFactor,
    OperatorRep,
    RapidityGrid,
    RegularityData,
    ScatteringFunction,
)
from services.fock import FockSpace, pair_matrix, projector_matrix, zf_create
from services.nuclearity import hardy_constant
from services.scatfn import regularity, srho, tube_points
from utils.helpers import max_abs, pair_tensor

logger = get_logger("formfactor")


# =========================
# Contractions
# =========================
def enumerate_contractions(n: int, k: int, exclude_kplus1: bool = False) -> List[Contraction]:
    """C_{n,k} (or the subset not contracting k+1), sorted by pair list"""
    if not 0 <= k <= n:
        raise MalformedContractionError(f"k={k} outside [0, {n}]")
    lefts = [l for l in range(k + 1, n + 1) if not (exclude_kplus1 and l == k + 1)]
    rights = list(range(1, k + 1))
    found = []
    for size in range(min(len(lefts), len(rights)) + 1):
        for chosen in itertools.combinations(lefts, size):
            for partners in itertools.permutations(rights, size):
                found.append(Contraction(tuple(zip(chosen, partners)), n, k))
    return sorted(found, key=lambda c: c.pairs)


def count_contractions(n: int, k: int, exclude_kplus1: bool = False) -> int:
    """sum_N N! C(k, N) C(n - k [- 1], N)"""
    free = max(0, n - k - (1 if exclude_kplus1 else 0))
    return sum(math.factorial(m) * math.comb(k, m) * math.comb(free, m) for m in range(min(k, free) + 1))


def swap_rule(a: int, b: int, k: int) -> Tuple[int, int]:
    """S^(k)_{a,b} is S_{b,a} when a and b sit on opposite sides of k"""
    if a <= k < b or b <= k < a:
        return b, a
    return a, b


def sc_pairs(c: Contraction, k: int) -> List[Tuple[int, int]]:
    """Ordered position pairs (a, b), each contributing S2(theta_a - theta_b) to S_C^(k)"""
    factors = []
    for l, r in c.pairs:
        for m in range(r + 1, l):
            factors.append(swap_rule(m, r, k))
    for li, ri in c.pairs:
        for lj, rj in c.pairs:
            if ri < rj and li < lj:
                factors.append(swap_rule(rj, li, k))
    return factors


def contraction_factor(s2: ScatteringFunction, c: Contraction, indices: Sequence[int],
                       grid: RapidityGrid, k: Optional[int] = None) -> Tuple[bool, int, complex]:
    """(Kronecker support, (-1)^|C|, S_C^(k)) at one index tuple"""
    k = c.k if k is None else k
    if len(indices) != c.n:
        raise MalformedContractionError(f"need {c.n} indices, got {len(indices)}")
    support = all(indices[l - 1] == indices[r - 1] for l, r in c.pairs)
    theta = grid.nodes[np.asarray(indices, dtype=int)]
    value = 1.0 + 0j
    for a, b in sc_pairs(c, k):
        value *= complex(s2.evaluate(theta[a - 1] - theta[b - 1]))
    return support, c.sign, value


def _delta_tensor(c: Contraction, d: int) -> np.ndarray:
    result = np.ones((1,) * c.n)
    for l, r in c.pairs:
        result = result * pair_tensor(np.eye(d), l - 1, r - 1, c.n)
    return result


def _sc_tensor(pairs: np.ndarray, c: Contraction, k: int) -> np.ndarray:
    result = np.ones((1,) * c.n, dtype=complex)
    for a, b in sc_pairs(c, k):
        result = result * pair_tensor(pairs, a - 1, b - 1, c.n)
    return result


def _bra_ket_positions(c: Contraction, skip: Iterable[int] = ()) -> Tuple[List[int], List[int]]:
    skip = set(skip)
    bra = [p for p in range(c.k + 1, c.n + 1) if p not in c.lefts and p not in skip]
    ket = [p for p in range(1, c.k + 1) if p not in c.rights]
    return bra, ket


def _expand(tensor: np.ndarray, c: Contraction) -> np.ndarray:
    """Insert unit axes at the contracted positions"""
    missing = sorted(set(c.lefts) | set(c.rights))
    for position in missing:
        tensor = np.expand_dims(tensor, position - 1)
    return tensor


# =========================
# Matrix elements
# =========================
def _check_guard(a: OperatorRep, n: int):
    if a.n_max < n:
        raise TruncationError(f"operator truncated at {a.n_max} cannot carry {n} particles")


def _matrix_element(s2: ScatteringFunction, matrix: np.ndarray, space: FockSpace,
                    n_bra: int, n_ket: int) -> np.ndarray:
    """<z+..z+ Omega, M z+..z+ Omega>; axes are ket positions ascending, then bra ascending"""
    d = space.grid.d
    bra = math.sqrt(math.factorial(n_bra)) * projector_matrix(s2, space.grid, n_bra)
    ket = math.sqrt(math.factorial(n_ket)) * projector_matrix(s2, space.grid, n_ket)
    block = matrix[space.block(n_bra), space.block(n_ket)]
    element = (bra.conj().T @ block @ ket).reshape((d,) * (n_bra + n_ket))
    # ket columns follow operator order z+_{r_a} ... z+_{r_b}, i.e. descending positions
    order = list(range(n_bra + n_ket - 1, n_bra - 1, -1)) + list(range(n_bra))
    return np.transpose(element, order)


def contracted_me(s2: ScatteringFunction, a: OperatorRep, c: Contraction, n: int, k: int) -> np.ndarray:
    """<l_C|A|r_C>_{n,k} over the uncontracted positions"""
    if (c.n, c.k) != (n, k):
        raise MalformedContractionError(f"contraction belongs to C_{{{c.n},{c.k}}}, not C_{{{n},{k}}}")
    _check_guard(a, max(n - k, k))
    space = FockSpace(s2, a.grid, a.n_max)
    bra, ket = _bra_ket_positions(c)
    return _matrix_element(s2, a.matrix, space, len(bra), len(ket))


def acon(s2: ScatteringFunction, a: OperatorRep, n: int, k: int) -> np.ndarray:
    """Completely contracted matrix element <A>^con_{n,k} as a full n-index tensor"""
    _check_guard(a, max(n - k, k))
    space = FockSpace(s2, a.grid, a.n_max)
    pairs = pair_matrix(s2, a.grid)
    d = a.grid.d
    total = np.zeros((d,) * n, dtype=complex)
    for c in enumerate_contractions(n, k):
        bra, ket = _bra_ket_positions(c)
        element = _matrix_element(s2, a.matrix, space, len(bra), len(ket))
        total = total + c.sign * _delta_tensor(c, d) * _sc_tensor(pairs, c, k) * _expand(element, c)
    return total


def acon_direct(s2: ScatteringFunction, a: OperatorRep, n: int, k: int) -> np.ndarray:
    """Term-by-term evaluation through explicit ZF creation on Fock vectors"""
    _check_guard(a, max(n - k, k))
    grid = a.grid
    d = grid.d
    states: Dict[Tuple[int, ...], np.ndarray] = {}

    def state(modes: Tuple[int, ...]) -> np.ndarray:
        # z+_{modes[0]} ... z+_{modes[-1]} Omega
        if modes not in states:
            vec = FockVector.vacuum(grid, a.n_max)
            for mode in reversed(modes):
                e = np.zeros(d)
                e[mode] = 1.0
                vec = zf_create(s2, e, vec)
            states[modes] = vec.to_array()
        return states[modes]

    contractions = enumerate_contractions(n, k)
    result = np.zeros((d,) * n, dtype=complex)
    for indices in itertools.product(range(d), repeat=n):
        value = 0j
        for c in contractions:
            support, sign, factor = contraction_factor(s2, c, indices, grid)
            if not support:
                continue
            bra = tuple(indices[p - 1] for p in range(k + 1, n + 1) if p not in c.lefts)
            ket = tuple(indices[p - 1] for p in range(k, 0, -1) if p not in c.rights)
            value += sign * factor * np.vdot(state(bra), a.matrix @ state(ket))
        result[indices] = value
    return result


# =========================
# Recursion identities
# =========================
def _commuted_sum(s2: ScatteringFunction, commutators: List[np.ndarray], space: FockSpace,
                  n: int, k: int, weight_k: int) -> np.ndarray:
    """sum over C not contracting k+1 of delta_C S_C^(weight_k) <l_C + {k+1}|[., .]_j|r_C>"""
    d = space.grid.d
    pairs = pair_matrix(s2, space.grid)
    total = np.zeros((d,) * n, dtype=complex)
    for c in enumerate_contractions(n, k, exclude_kplus1=True):
        bra, ket = _bra_ket_positions(c, skip=(k + 1,))
        per_mode = [_matrix_element(s2, m, space, len(bra), len(ket)) for m in commutators]
        element = np.stack(per_mode, axis=len(ket))
        total = total + c.sign * _delta_tensor(c, d) * _sc_tensor(pairs, c, weight_k) * _expand(element, c)
    return total


def lemma_tech_residual(s2: ScatteringFunction, a: OperatorRep, n: int, k: int) -> Tuple[float, float]:
    """Max deviations in the annihilator and creator forms of the contraction recursion"""
    if not 0 <= k <= n - 1:
        raise MalformedContractionError(f"need 0 <= k <= n-1, got k={k}, n={n}")
    _check_guard(a, n)
    space = FockSpace(s2, a.grid, a.n_max)
    matrix = a.matrix

    with_annihilator = [space.mode_annihilation(j) @ matrix - matrix @ space.mode_annihilation(j)
                        for j in range(a.grid.d)]
    with_creator = [matrix @ space.mode_creation(j) - space.mode_creation(j) @ matrix
                    for j in range(a.grid.d)]

    res1 = max_abs(acon(s2, a, n, k) - _commuted_sum(s2, with_annihilator, space, n, k, k))
    res2 = max_abs(acon(s2, a, n, k + 1) - _commuted_sum(s2, with_creator, space, n, k, k + 1))
    logger.debug("recursion residuals n=%d k=%d: %.3g %.3g", n, k, res1, res2)
    return res1, res2


def lr_bound_ratio(s2: ScatteringFunction, a: OperatorRep, c: Contraction,
                   rng: np.random.Generator, trials: int = 20) -> float:
    """max |<l_C|A|r_C>(F_L x F_R)| / (sqrt(q!) sqrt(p!) |F_L| |F_R| |A|) over random F"""
    element = contracted_me(s2, a, c, c.n, c.k)
    bra, ket = _bra_ket_positions(c)
    scale = math.sqrt(math.factorial(len(bra)) * math.factorial(len(ket))) * a.norm()
    if scale == 0:
        return 0.0
    worst = 0.0
    for _ in range(trials):
        f_ket = rng.standard_normal((a.grid.d,) * len(ket)) + 1j * rng.standard_normal((a.grid.d,) * len(ket))
        f_bra = rng.standard_normal((a.grid.d,) * len(bra)) + 1j * rng.standard_normal((a.grid.d,) * len(bra))
        f = np.multiply.outer(f_ket, f_bra)
        value = abs(np.sum(element * f))
        worst = max(worst, value / (scale * np.linalg.norm(f_ket) * np.linalg.norm(f_bra)))
    return worst


# =========================
# Tube bounds
# =========================
def srho_bound_check(s2: ScatteringFunction, n: int, rng: np.random.Generator, samples: int = 1000,
                     reg: Optional[RegularityData] = None) -> Dict[str, float]:
    """max |S^rho(zeta)| over random rho and tube points, against ||S2||^(n-1)"""
    reg = regularity(s2) if reg is None else reg
    points = tube_points(rng, n, samples, reg.norm_kappa)
    worst = 0.0
    for zeta in points:
        rho = tuple(int(x) for x in rng.permutation(n))
        worst = max(worst, abs(srho(s2, rho, zeta)))
    bound = reg.norm ** (n - 1)
    return {"n": n, "max_modulus": worst, "bound": bound, "width": reg.norm_kappa,
            "passed": worst <= bound + 1e-8}


def master_bound_constant(s2: ScatteringFunction, kappa: float,
                          reg: Optional[RegularityData] = None) -> float:
    """Per-particle constant (8/pi) ||S2|| / sqrt(kappa(S2) - kappa)"""
    return hardy_constant(s2, kappa, reg=reg)


def gaussian_master_bound_report(s2: ScatteringFunction, n: int, kappa: float, rng: np.random.Generator,
                                 samples: int = 200, trials: int = 5) -> Dict[str, object]:
    """Soft check of the master bound on products of unit-norm Gaussians continued into the tube.

    The samples are test functions, not form factors of an operator; the
    report says so in its `sampled` field.
    """
    reg = regularity(s2)
    constant = master_bound_constant(s2, kappa, reg)
    bound = constant ** n
    worst = 0.0
    for _ in range(trials):
        factors = []
        for _ in range(n):
            width = float(rng.uniform(0.5, 1.5))
            center = float(rng.uniform(-1.0, 1.0))
            # unit L2 norm on the real line
            amplitude = (width * math.sqrt(math.pi)) ** -0.5
            factors.append(GaussianFactor(center, width, amplitude))
        vector = ClosedFormVector(n, tuple(factors))
        points = tube_points(rng, n, samples, kappa)
        worst = max(worst, float(np.max(np.abs(vector.evaluate(points)))))
    report = {"sampled": "unit_gaussian_products", "n": n, "kappa": kappa, "constant": constant,
              "bound": bound, "gaussian_max": worst, "ratio": worst / bound, "within_bound": worst <= bound}
    if not report["within_bound"]:
        logger.warning("sampled Gaussian product exceeds the master bound by %.3g", worst / bound)
    return report
