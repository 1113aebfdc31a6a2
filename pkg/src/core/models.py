"""
Domain models for WedgeLab
"""

import enum
import json
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, ValidationInfo, field_validator, model_validator

from .config import DEFAULT_TOLERANCES
from .errors import (
    GridError,
    MalformedContractionError,
    PrecedenceError,
    SizeMismatchError,
)
from utils.helpers import complex_pair, format_complex, parse_complex


# =========================
# Enums
# =========================
class Family(str, enum.Enum):
    CONSTANT = "constant"
    PRODUCT_POLES = "product_poles"
    SINH_GORDON = "sinh_gordon"


class Direction(str, enum.Enum):
    OUT = "out"
    IN = "in"


class SeriesMode(str, enum.Enum):
    BOSONIC = "bosonic"
    FERMIONIC = "fermionic"


class SupLocation(str, enum.Enum):
    ATTAINED = "attained"
    ASYMPTOTIC = "asymptotic"


class WeightsRule(str, enum.Enum):
    UNIT = "unit"
    TRAPEZOID = "trapezoid"
    GAUSS_LEGENDRE = "gauss-legendre"


# =========================
# Scattering functions
# =========================
class ScatteringFunction(BaseModel):
    """Two-particle scattering function S2 of one of the supported families"""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    family: Family
    value: int = 1
    sign: int = 1
    poles: Tuple[complex, ...] = ()
    b: Optional[float] = None
    name: str = ""

    @field_validator("poles", mode="before")
    @classmethod
    def _parse_poles(cls, raw: Any) -> Tuple[complex, ...]:
        if raw is None:
            return ()
        parsed = []
        for item in raw:
            if isinstance(item, str):
                parsed.append(parse_complex(item))
            elif isinstance(item, (list, tuple)) and len(item) == 2:
                parsed.append(complex(float(item[0]), float(item[1])))
            else:
                parsed.append(complex(item))
        return tuple(parsed)

    @model_validator(mode="after")
    def _check_family(self, info: ValidationInfo) -> "ScatteringFunction":
        # validation context may carry {"closure": tolerance}
        closure = (info.context or {}).get("closure", DEFAULT_TOLERANCES.closure)
        if self.family is Family.CONSTANT:
            if self.value not in (1, -1):
                raise ValueError(f"constant value must be +1 or -1, got {self.value}")
        elif self.family is Family.PRODUCT_POLES:
            if self.sign not in (1, -1):
                raise ValueError(f"sign must be +1 or -1, got {self.sign}")
            if not self.poles:
                raise ValueError("product_poles needs at least one pole")
            for beta in self.poles:
                if not 0 < beta.imag < math.pi:
                    raise ValueError(f"pole {format_complex(beta)}: Im beta must lie in (0, pi)")
            for beta in self.poles:
                partner = -beta.conjugate()
                if min(abs(partner - other) for other in self.poles) > closure:
                    raise ValueError(
                        f"pole {format_complex(beta)} lacks closure partner {format_complex(partner)}"
                    )
        elif self.family is Family.SINH_GORDON:
            if self.b is None or not 0 < self.b < math.pi:
                raise ValueError(f"sinh_gordon coupling b must lie in (0, pi), got {self.b}")
        return self

    def evaluate(self, zeta: Any) -> np.ndarray:
        """Closed-form continuation, vectorized; no pole check"""
        zeta = np.asarray(zeta, dtype=complex)
        if self.family is Family.CONSTANT:
            return np.full(zeta.shape, complex(self.value))
        z = np.sinh(zeta)
        if self.family is Family.SINH_GORDON:
            isb = 1j * math.sin(self.b)
            return (z - isb) / (z + isb)
        result = np.full(zeta.shape, complex(self.sign))
        for sb in np.sinh(np.asarray(self.poles, dtype=complex)):
            result = result * (sb - z) / (sb + z)
        return result

    def denominators(self, zeta: Any) -> np.ndarray:
        """Smallest denominator modulus per point (inf for entire families)"""
        zeta = np.asarray(zeta, dtype=complex)
        if self.family is Family.CONSTANT:
            return np.full(zeta.shape, np.inf)
        z = np.sinh(zeta)
        if self.family is Family.SINH_GORDON:
            return np.abs(z + 1j * math.sin(self.b))
        dens = [np.abs(sb + z) for sb in np.sinh(np.asarray(self.poles, dtype=complex))]
        return np.min(np.stack(dens), axis=0)

    def to_document(self) -> Dict[str, Any]:
        document: Dict[str, Any] = {"family": self.family.value}
        if self.family is Family.CONSTANT:
            document["value"] = self.value
        elif self.family is Family.PRODUCT_POLES:
            document["sign"] = self.sign
            document["poles"] = [format_complex(beta) for beta in self.poles]
        else:
            document["b"] = self.b
        if self.name:
            document["name"] = self.name
        return document

    @property
    def label(self) -> str:
        return self.name or self.family.value


@dataclass(frozen=True)
class RegularityData:
    """kappa(S2), ||S2|| and the sign class S2(0)"""
    kappa: float
    norm: float
    sign_class: int
    norm_kappa: float
    boundary_singular: bool = False
    sup_location: SupLocation = SupLocation.ASYMPTOTIC
    sup_theta: Optional[float] = None

    def __post_init__(self):
        if not 0 < self.kappa <= math.pi / 2 + 1e-15:
            raise ValueError(f"kappa {self.kappa} outside (0, pi/2]")
        if self.norm < 1 - 1e-12:
            raise ValueError(f"norm {self.norm} below 1")
        if self.sign_class not in (1, -1):
            raise ValueError(f"sign class must be +1 or -1, got {self.sign_class}")


@dataclass(frozen=True)
class Singularity:
    location: complex
    depth: float
    source: complex


# =========================
# Rapidity grids and Fock vectors
# =========================
@dataclass(eq=False)
class RapidityGrid:
    """Ordered rapidity nodes with quadrature weights and particle mass"""
    nodes: np.ndarray
    weights: Optional[np.ndarray] = None
    mass: float = 1.0

    def __post_init__(self):
        self.nodes = np.asarray(self.nodes, dtype=float)
        if self.nodes.ndim != 1 or self.nodes.size == 0:
            raise GridError("nodes must be a non-empty vector")
        if np.any(np.diff(self.nodes) <= 0):
            raise GridError("nodes must be strictly increasing")
        if self.weights is None:
            self.weights = np.ones_like(self.nodes)
        self.weights = np.asarray(self.weights, dtype=float)
        if self.weights.shape != self.nodes.shape:
            raise GridError("weights must match nodes")
        if np.any(self.weights <= 0):
            raise GridError("weights must be positive")
        if not self.mass > 0:
            raise GridError("mass must be positive")

    @classmethod
    def uniform(cls, d: int, theta_min: float, theta_max: float, mass: float = 1.0,
                weights_rule: str = "unit") -> "RapidityGrid":
        rule = WeightsRule(weights_rule)
        if rule is WeightsRule.GAUSS_LEGENDRE:
            x, w = np.polynomial.legendre.leggauss(d)
            half = (theta_max - theta_min) / 2
            return cls(theta_min + half * (x + 1), half * w, mass)
        nodes = np.linspace(theta_min, theta_max, d)
        if rule is WeightsRule.UNIT or d == 1:
            return cls(nodes, None, mass)
        h = nodes[1] - nodes[0]
        weights = np.full(d, h)
        weights[[0, -1]] = h / 2
        return cls(nodes, weights, mass)

    @property
    def d(self) -> int:
        return int(self.nodes.size)

    def sample(self, func) -> np.ndarray:
        """One-particle vector psi(theta_i) * sqrt(w_i)"""
        return np.asarray(func(self.nodes), dtype=complex) * np.sqrt(self.weights)

    def same_as(self, other: "RapidityGrid") -> bool:
        return (
            self is other
            or (
                self.d == other.d
                and np.array_equal(self.nodes, other.nodes)
                and np.array_equal(self.weights, other.weights)
                and self.mass == other.mass
            )
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "nodes": [float(x) for x in self.nodes],
            "weights": [float(x) for x in self.weights],
            "mass": float(self.mass),
        }


@dataclass(eq=False)
class SectorTensor:
    """n-particle amplitudes over the grid, shape (d,)*n"""
    n: int
    grid: RapidityGrid
    amplitudes: np.ndarray

    def __post_init__(self):
        self.amplitudes = np.asarray(self.amplitudes, dtype=complex)
        expected = (self.grid.d,) * self.n
        if self.amplitudes.shape != expected:
            if self.amplitudes.size == self.grid.d ** self.n:
                self.amplitudes = self.amplitudes.reshape(expected)
            else:
                raise SizeMismatchError(
                    f"sector {self.n} needs {self.grid.d ** self.n} amplitudes, "
                    f"got {self.amplitudes.size}"
                )

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes.ravel()))

    def with_amplitudes(self, amplitudes: np.ndarray) -> "SectorTensor":
        return SectorTensor(self.n, self.grid, amplitudes)


@dataclass(eq=False)
class FockVector:
    """Graded sequence of sector tensors n = 0..n_max"""
    grid: RapidityGrid
    sectors: List[SectorTensor]
    truncated: bool = False

    def __post_init__(self):
        for n, sector in enumerate(self.sectors):
            if sector.n != n:
                raise SizeMismatchError(f"sector at position {n} has n={sector.n}")
            if not sector.grid.same_as(self.grid):
                raise SizeMismatchError("all sectors must share one grid")

    # -- constructors --
    @classmethod
    def zeros(cls, grid: RapidityGrid, n_max: int) -> "FockVector":
        return cls(grid, [SectorTensor(n, grid, np.zeros((grid.d,) * n, dtype=complex))
                          for n in range(n_max + 1)])

    @classmethod
    def vacuum(cls, grid: RapidityGrid, n_max: int) -> "FockVector":
        vec = cls.zeros(grid, n_max)
        vec.sectors[0].amplitudes[()] = 1.0
        return vec

    @classmethod
    def from_sector(cls, sector: SectorTensor, n_max: Optional[int] = None) -> "FockVector":
        n_max = sector.n if n_max is None else n_max
        vec = cls.zeros(sector.grid, n_max)
        vec.sectors[sector.n] = sector.with_amplitudes(sector.amplitudes.copy())
        return vec

    @classmethod
    def random(cls, rng: np.random.Generator, grid: RapidityGrid, n_max: int,
               guard: int = 1) -> "FockVector":
        """Gaussian amplitudes; the top `guard` sectors stay empty"""
        vec = cls.zeros(grid, n_max)
        for n in range(n_max + 1 - guard):
            shape = (grid.d,) * n
            vec.sectors[n] = SectorTensor(
                n, grid, rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
            )
        return vec

    @classmethod
    def from_array(cls, grid: RapidityGrid, n_max: int, array: np.ndarray) -> "FockVector":
        array = np.asarray(array, dtype=complex)
        sectors, offset = [], 0
        for n in range(n_max + 1):
            size = grid.d ** n
            sectors.append(SectorTensor(n, grid, array[offset:offset + size].reshape((grid.d,) * n)))
            offset += size
        if offset != array.size:
            raise SizeMismatchError(f"array of size {array.size} does not match truncated space {offset}")
        return cls(grid, sectors)

    # -- algebra --
    @property
    def n_max(self) -> int:
        return len(self.sectors) - 1

    def sector(self, n: int) -> np.ndarray:
        return self.sectors[n].amplitudes

    def to_array(self) -> np.ndarray:
        return np.concatenate([s.amplitudes.ravel() for s in self.sectors])

    def copy(self) -> "FockVector":
        return FockVector(self.grid, [s.with_amplitudes(s.amplitudes.copy()) for s in self.sectors],
                          self.truncated)

    def _check_compatible(self, other: "FockVector"):
        if other.n_max != self.n_max or not other.grid.same_as(self.grid):
            raise SizeMismatchError("Fock vectors live on different truncated spaces")

    def __add__(self, other: "FockVector") -> "FockVector":
        self._check_compatible(other)
        return FockVector(
            self.grid,
            [a.with_amplitudes(a.amplitudes + b.amplitudes) for a, b in zip(self.sectors, other.sectors)],
            self.truncated or other.truncated,
        )

    def __sub__(self, other: "FockVector") -> "FockVector":
        return self + other.scale(-1.0)

    def scale(self, factor: complex) -> "FockVector":
        return FockVector(self.grid, [s.with_amplitudes(factor * s.amplitudes) for s in self.sectors],
                          self.truncated)

    def inner(self, other: "FockVector") -> complex:
        """<self, other>, antilinear in self"""
        self._check_compatible(other)
        return complex(np.vdot(self.to_array(), other.to_array()))

    def norm(self) -> float:
        return float(np.linalg.norm(self.to_array()))

    def top_is_empty(self, levels: int = 1) -> bool:
        return all(not np.any(self.sectors[n].amplitudes) for n in range(self.n_max + 1 - levels, self.n_max + 1))

    # -- serialization --
    def to_dict(self) -> Dict[str, Any]:
        return {
            "grid": self.grid.to_dict(),
            "sectors": [
                {"n": s.n, "amplitudes": [complex_pair(z) for z in s.amplitudes.ravel()]}
                for s in self.sectors
            ],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "FockVector":
        grid_data = data["grid"]
        grid = RapidityGrid(np.array(grid_data["nodes"]), np.array(grid_data["weights"]),
                            float(grid_data["mass"]))
        sectors = []
        for entry in sorted(data["sectors"], key=lambda e: e["n"]):
            pairs = np.array(entry["amplitudes"], dtype=float).reshape(-1, 2)
            sectors.append(SectorTensor(int(entry["n"]), grid, pairs[:, 0] + 1j * pairs[:, 1]))
        return cls(grid, sectors)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "FockVector":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class GaussianFactor:
    center: float
    width: float
    amplitude: complex = 1.0

    def __post_init__(self):
        if not self.width > 0:
            raise ValueError("Gaussian width must be positive")

    def __call__(self, zeta: Any) -> np.ndarray:
        zeta = np.asarray(zeta, dtype=complex)
        return self.amplitude * np.exp(-((zeta - self.center) ** 2) / (2 * self.width ** 2))


@dataclass(frozen=True)
class ClosedFormVector:
    """Product of Gaussians, continued analytically in closed form"""
    n: int
    factors: Tuple[GaussianFactor, ...]

    def __post_init__(self):
        if len(self.factors) != self.n:
            raise SizeMismatchError(f"{self.n}-particle vector needs {self.n} factors")

    def evaluate(self, points: Any) -> np.ndarray:
        """points has shape (..., n)"""
        points = np.asarray(points, dtype=complex)
        result = np.ones(points.shape[:-1], dtype=complex)
        for k, factor in enumerate(self.factors):
            result = result * factor(points[..., k])
        return result


# =========================
# Form factors
# =========================
@dataclass(frozen=True)
class Contraction:
    """Pairs (l, r) with l in {k+1..n}, r in {1..k}; positions are 1-based"""
    pairs: Tuple[Tuple[int, int], ...]
    n: int
    k: int

    def __post_init__(self):
        object.__setattr__(self, "pairs", tuple(sorted((int(l), int(r)) for l, r in self.pairs)))
        lefts = [l for l, _ in self.pairs]
        rights = [r for _, r in self.pairs]
        if not 0 <= self.k <= self.n:
            raise MalformedContractionError(f"k={self.k} outside [0, {self.n}]")
        if any(not self.k < l <= self.n for l in lefts):
            raise MalformedContractionError(f"left indices {lefts} outside {{k+1..n}}")
        if any(not 1 <= r <= self.k for r in rights):
            raise MalformedContractionError(f"right indices {rights} outside {{1..k}}")
        if len(set(lefts)) != len(lefts) or len(set(rights)) != len(rights):
            raise MalformedContractionError("left and right indices must be pairwise distinct")

    @property
    def lefts(self) -> Tuple[int, ...]:
        return tuple(l for l, _ in self.pairs)

    @property
    def rights(self) -> Tuple[int, ...]:
        return tuple(r for _, r in self.pairs)

    @property
    def size(self) -> int:
        return len(self.pairs)

    @property
    def sign(self) -> int:
        return -1 if self.size % 2 else 1

    def contracts(self, position: int) -> bool:
        return position in self.lefts or position in self.rights


@dataclass(eq=False)
class OperatorRep:
    """Dense operator on the truncated discrete Fock space"""
    matrix: np.ndarray
    grid: RapidityGrid
    n_max: int

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=complex)
        dim = sum(self.grid.d ** n for n in range(self.n_max + 1))
        if self.matrix.shape != (dim, dim):
            raise SizeMismatchError(f"operator must be {dim}x{dim}, got {self.matrix.shape}")

    @classmethod
    def identity(cls, grid: RapidityGrid, n_max: int) -> "OperatorRep":
        dim = sum(grid.d ** n for n in range(n_max + 1))
        return cls(np.eye(dim, dtype=complex), grid, n_max)

    @classmethod
    def random(cls, rng: np.random.Generator, grid: RapidityGrid, n_max: int,
               kind: str = "general") -> "OperatorRep":
        dim = sum(grid.d ** n for n in range(n_max + 1))
        raw = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
        if kind == "hermitian":
            matrix = (raw + raw.conj().T) / 2
        elif kind == "unitary":
            q, r = np.linalg.qr(raw)
            matrix = q * (np.diag(r) / np.abs(np.diag(r)))
        elif kind == "general":
            matrix = raw
        else:
            raise ValueError(f"unknown operator kind {kind!r}")
        return cls(matrix, grid, n_max)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def norm(self) -> float:
        return float(np.linalg.norm(self.matrix, ord=2))

    def apply(self, vec: FockVector) -> FockVector:
        if vec.n_max != self.n_max:
            raise SizeMismatchError("vector and operator truncation differ")
        return FockVector.from_array(self.grid, self.n_max, self.matrix @ vec.to_array())


# =========================
# Nuclearity
# =========================
@dataclass
class KernelDiscretization:
    """Gauss-Legendre discretization of the kernel on [-half_range, half_range]"""
    half_range: Optional[float] = None
    node_count: int = 16
    rule: str = "gauss-legendre"
    refinement_tol: float = 1e-8
    max_refinements: int = 6
    nodes_per_ratio: float = 6.0
    theta_prime_factor: float = 4.0

    def __post_init__(self):
        if self.node_count < 16:
            raise ValueError("node_count must be at least 16")
        if self.rule != "gauss-legendre":
            raise ValueError(f"unsupported quadrature rule {self.rule!r}")
        if self.half_range is not None and not self.half_range > 0:
            raise ValueError("half_range must be positive")


@dataclass
class TraceNormResult:
    value: float
    nodes: int
    half_range: float
    delta: float
    history: List[Tuple[int, float]] = field(default_factory=list)

    def __float__(self) -> float:
        return self.value


@dataclass
class NuclearityRow:
    s: float
    kappa: float
    sigma: float
    t_trace: float
    product: float
    bound_bosonic: Optional[float]
    fermionic_x: Optional[float]
    log10_bound_fermionic: Optional[float]
    refinement_delta: float = 0.0
    # relative change of the trace norm under one more node doubling
    stability: float = 0.0

    def __post_init__(self):
        if (self.bound_bosonic is None) != (self.product >= 1):
            raise ValueError("bosonic bound must be finite exactly when the product is below 1")


@dataclass
class NuclearityReport:
    family: str
    mass: float
    rows: List[NuclearityRow]
    s_min: Optional[float] = None
    kappa_star: Optional[float] = None
    compton: Dict[str, float] = field(default_factory=dict)
    convergence: Dict[str, Any] = field(default_factory=dict)
    checks: Dict[str, Any] = field(default_factory=dict)


# =========================
# Scattering states
# =========================
@dataclass(eq=False)
class OrderedWavefunctions:
    """One-particle vectors psi_1 < ... < psi_n ordered by support"""
    grid: RapidityGrid
    wavefunctions: Sequence[np.ndarray]
    threshold: float = 1e-14

    def __post_init__(self):
        self.wavefunctions = [np.asarray(psi, dtype=complex) for psi in self.wavefunctions]
        for psi in self.wavefunctions:
            if psi.shape != (self.grid.d,):
                raise SizeMismatchError("wavefunctions must be vectors over the grid")
        supports = self.supports
        for left, right in zip(supports, supports[1:]):
            if left.size and right.size and left.max() >= right.min():
                raise PrecedenceError("wavefunction supports are not strictly increasing")

    @property
    def supports(self) -> List[np.ndarray]:
        return [np.flatnonzero(np.abs(psi) > self.threshold) for psi in self.wavefunctions]

    @property
    def n(self) -> int:
        return len(self.wavefunctions)
