"""
Scattering functions: parsing, evaluation, certification and derived objects
"""

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import ValidationError
from scipy import optimize

from core.config import DEFAULT_TOLERANCES, ToleranceConfig
from core.errors import (
    PhaseUnwrapError,
    PoleProximityError,
    RegularityError,
    ScatteringFunctionError,
    SpecSemanticError,
    SpecSyntaxError,
)
from core.logging import get_logger
from core.models import (
    Family,
    RegularityData,
    ScatteringFunction,
    Singularity,
    SupLocation,
)
from utils.helpers import dump_json, inversions

logger = get_logger("scatfn")

SPECS_DIR = Path(__file__).resolve().parents[2] / "specs"

PRESETS: Dict[str, Dict[str, Any]] = {
    "free": {"family": "constant", "value": 1, "name": "free"},
    "ising": {"family": "constant", "value": -1, "name": "ising"},
    "sinh_gordon": {"family": "sinh_gordon", "b": 1.0, "name": "sinh_gordon"},
    "bound_state_pi4": {
        "family": "product_poles",
        "sign": 1,
        "poles": ["0.7853981633974483i"],
        "name": "bound_state_pi4",
    },
}


# =========================
# Documents
# =========================
def parse_spec(text: str, tol: ToleranceConfig = DEFAULT_TOLERANCES) -> ScatteringFunction:
    """Parse and validate a scattering-function document; poles pair up within tol.closure"""
    try:
        document = json.loads(text)
    except json.JSONDecodeError as e:
        raise SpecSyntaxError(e.msg, e.lineno, e.colno) from e

    if not isinstance(document, dict):
        raise SpecSemanticError("document must be a JSON object")
    if "family" not in document:
        raise SpecSemanticError("missing key 'family'")

    allowed = {"family", "value", "sign", "poles", "b", "name"}
    unknown = sorted(set(document) - allowed)
    if unknown:
        raise SpecSemanticError(f"unknown keys {unknown}")

    poles = document.get("poles")
    if poles is not None and any(not isinstance(p, str) for p in poles):
        raise SpecSemanticError("poles must be complex strings such as '0.5+1.2i'")

    try:
        return ScatteringFunction.model_validate(document, context={"closure": tol.closure})
    except ValidationError as e:
        messages = "; ".join(err["msg"] for err in e.errors())
        raise SpecSemanticError(messages) from e
    except ValueError as e:
        raise SpecSemanticError(str(e)) from e


def load_spec(source: str, tol: ToleranceConfig = DEFAULT_TOLERANCES) -> ScatteringFunction:
    """Load from a file path or a `preset:<name>` reference"""
    if source.startswith("preset:"):
        name = source.split(":", 1)[1]
        if name not in PRESETS:
            raise SpecSemanticError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
        return parse_spec(json.dumps(PRESETS[name]), tol)
    return parse_spec(Path(source).read_text(encoding="utf-8"), tol)


def dump_spec(s2: ScatteringFunction) -> str:
    return dump_json(s2.to_document())


# =========================
# Evaluation
# =========================
def singularities(s2: ScatteringFunction) -> List[Singularity]:
    """Poles of the continuation with -pi <= Im < 0, nearest first"""
    found: List[Singularity] = []
    if s2.family is Family.SINH_GORDON:
        found = [
            Singularity(complex(0, -s2.b), s2.b, complex(0, s2.b)),
            Singularity(complex(0, s2.b - math.pi), math.pi - s2.b, complex(0, s2.b)),
        ]
    elif s2.family is Family.PRODUCT_POLES:
        for beta in s2.poles:
            # sinh(zeta) = -sinh(beta) at zeta = -beta and zeta = beta - i*pi
            found.append(Singularity(-beta, beta.imag, beta))
            found.append(Singularity(beta - 1j * math.pi, math.pi - beta.imag, beta))
    return sorted(found, key=lambda s: (s.depth, s.location.real))


def refine_singularity(singularity: Singularity, offset: complex = 0.05 + 0.05j) -> complex:
    """Newton root of sinh(z) + sinh(source) started near the closed-form pole"""
    shift = np.sinh(singularity.source)
    root = optimize.newton(
        lambda z: np.sinh(z) + shift,
        singularity.location + offset,
        fprime=np.cosh,
        tol=1e-14,
        maxiter=100,
    )
    return complex(root)


def cross_check_singularities(s2: ScatteringFunction) -> float:
    """Largest distance between closed-form poles and their Newton refinements"""
    gaps = [abs(refine_singularity(s) - s.location) for s in singularities(s2)]
    return max(gaps, default=0.0)


def singular_depth(s2: ScatteringFunction) -> float:
    """kappa-tilde: distance below the real axis of the nearest singularity"""
    poles = singularities(s2)
    return poles[0].depth if poles else math.inf


def kappa_of(s2: ScatteringFunction) -> float:
    return min(math.pi / 2, singular_depth(s2))


def evaluate(s2: ScatteringFunction, zeta: Any,
             tol: ToleranceConfig = DEFAULT_TOLERANCES) -> Any:
    """Analytic continuation of S2; scalar in, scalar out"""
    scalar = np.ndim(zeta) == 0
    points = np.atleast_1d(np.asarray(zeta, dtype=complex))
    if s2.family is not Family.CONSTANT:
        for pole in singularities(s2):
            # poles repeat with period 2*pi*i
            shifted = points - pole.location
            shifted = shifted.real + 1j * ((shifted.imag + math.pi) % (2 * math.pi) - math.pi)
            close = np.abs(shifted) <= tol.pole_proximity
            if np.any(close):
                raise PoleProximityError(complex(points[close][0]), pole.source)
    values = s2.evaluate(points)
    return complex(values[0]) if scalar else values


@dataclass
class PropertyReport:
    unitarity: float
    crossing: float
    symmetry: float
    strip_max: float
    samples: int
    # max ||S2(theta)| - 1| on the real samples
    unit_modulus: float = 0.0

    @property
    def max_residual(self) -> float:
        return max(self.unitarity, self.crossing, self.symmetry)

    def passed(self, tol: ToleranceConfig = DEFAULT_TOLERANCES) -> bool:
        return (
            self.max_residual < tol.s2rel
            and self.unit_modulus < tol.unit_modulus
            and self.strip_max <= 1 + tol.s2rel
        )

    def to_dict(self) -> Dict[str, float]:
        return {
            "unitarity": self.unitarity,
            "crossing": self.crossing,
            "symmetry": self.symmetry,
            "strip_max": self.strip_max,
            "unit_modulus": self.unit_modulus,
            "samples": self.samples,
        }


def validate_properties(s2: ScatteringFunction, n_samples: int = 1000, strip_samples: int = 64,
                        theta_range: float = 15.0) -> PropertyReport:
    """Residuals of conj S = 1/S = S(. + i pi) = S(-.) on real samples"""
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    theta = np.linspace(-theta_range, theta_range, n_samples)
    value = s2.evaluate(theta)
    inverse = 1.0 / value
    shifted = s2.evaluate(theta + 1j * math.pi)
    mirrored = s2.evaluate(-theta)

    # interior of the physical strip
    lam = np.linspace(0, math.pi, strip_samples + 2)[1:-1]
    grid = theta[:: max(1, n_samples // strip_samples)]
    strip = s2.evaluate(grid[:, None] + 1j * lam[None, :])

    return PropertyReport(
        unitarity=float(np.max(np.abs(np.conj(value) - inverse))),
        crossing=float(np.max(np.abs(inverse - shifted))),
        symmetry=float(np.max(np.abs(shifted - mirrored))),
        strip_max=float(np.max(np.abs(strip))),
        unit_modulus=float(np.max(np.abs(np.abs(value) - 1))),
        samples=n_samples,
    )


# =========================
# Regularity
# =========================
def sign_class(s2: ScatteringFunction, tol: ToleranceConfig = DEFAULT_TOLERANCES) -> int:
    value = complex(s2.evaluate(0.0))
    if abs(abs(value) - 1) > tol.sign_class:
        raise ScatteringFunctionError(f"|S2(0)| = {abs(value)} differs from 1")
    sign = 1 if value.real > 0 else -1
    if abs(value - sign) > tol.sign_class:
        raise ScatteringFunctionError(f"S2(0) = {value} is not +1 or -1")
    return sign


def _boundary_modulus(s2: ScatteringFunction, width: float, theta: np.ndarray) -> np.ndarray:
    # Im = pi + width carries the same values as Im = -width, mirrored in theta
    return np.abs(s2.evaluate(theta - 1j * width))


def strip_sup(s2: ScatteringFunction, width: float,
              tol: ToleranceConfig = DEFAULT_TOLERANCES) -> Tuple[float, SupLocation, Optional[float]]:
    """sup |S2| on the closed strip S(-width, pi + width) by boundary sampling"""
    if width <= 0:
        raise RegularityError("strip width must be positive")
    if s2.family is Family.CONSTANT:
        return 1.0, SupLocation.ASYMPTOTIC, None

    depth = singular_depth(s2)
    if depth <= width + tol.pole_proximity:
        raise RegularityError(
            f"singularity at depth {depth:.12g} lies on or inside the strip of width {width:.12g}"
        )

    half = 10.0
    while np.max(_boundary_modulus(s2, width, np.array([-half, half]))) - 1 > tol.norm_asymptote:
        half *= 2
        if half > 1e3:
            raise RegularityError("boundary values do not approach their asymptotic modulus")

    samples = 2001
    theta = np.linspace(-half, half, samples)
    values = _boundary_modulus(s2, width, theta)
    best = float(np.max(values))
    history = [best]
    for _ in range(12):
        samples = 2 * samples - 1
        theta = np.linspace(-half, half, samples)
        values = _boundary_modulus(s2, width, theta)
        current = float(np.max(values))
        history.append(current)
        if not np.isfinite(current):
            raise RegularityError(f"boundary sup diverges under refinement: {history}")
        if abs(current - best) <= tol.norm_refine * best:
            best = current
            break
        best = current
    else:
        raise RegularityError(f"boundary sup did not settle: {history}")

    if best <= 1 + tol.norm_asymptote:
        return max(best, 1.0), SupLocation.ASYMPTOTIC, None

    index = int(np.argmax(values))
    step = theta[1] - theta[0]
    polished = optimize.minimize_scalar(
        lambda t: -float(_boundary_modulus(s2, width, np.array([t]))[0]),
        bounds=(theta[index] - step, theta[index] + step),
        method="bounded",
        options={"xatol": 1e-12},
    )
    peak = max(best, -float(polished.fun))
    location = float(polished.x) if -polished.fun >= best else float(theta[index])

    # interior spot checks
    lam = np.linspace(0, width, 5)[1:-1]
    interior = np.abs(s2.evaluate(theta[:: max(1, samples // 200), None] - 1j * lam[None, :]))
    if np.max(interior) > peak * (1 + 1e-9):
        raise RegularityError("interior value exceeds boundary sup")

    logger.debug("strip sup %.12g at theta=%.6g (width %.6g, history %s)", peak, location, width, history)
    return peak, SupLocation.ATTAINED, location


def strip_norm(s2: ScatteringFunction, width: float,
               tol: ToleranceConfig = DEFAULT_TOLERANCES) -> float:
    return strip_sup(s2, width, tol)[0]


def regularity(s2: ScatteringFunction, margin: float = 0.5,
               tol: ToleranceConfig = DEFAULT_TOLERANCES) -> RegularityData:
    """kappa(S2), ||S2|| and the sign class"""
    depth = singular_depth(s2)
    gap = cross_check_singularities(s2)
    if gap > 1e-8:
        logger.warning("%s: closed-form poles differ from Newton roots by %.3g", s2.label, gap)
    kappa = min(math.pi / 2, depth)
    boundary_singular = depth <= kappa + tol.pole_proximity
    norm_kappa = kappa * margin if boundary_singular else kappa
    if boundary_singular:
        logger.info(
            "%s: pole on the boundary line Im = -%.6g; norm taken at width %.6g",
            s2.label, kappa, norm_kappa,
        )
    norm, location, theta = strip_sup(s2, norm_kappa, tol)
    return RegularityData(
        kappa=kappa,
        norm=norm,
        sign_class=sign_class(s2, tol),
        norm_kappa=norm_kappa,
        boundary_singular=boundary_singular,
        sup_location=location,
        sup_theta=theta,
    )


# =========================
# Phase shift and products
# =========================
def _continued_log(s2: ScatteringFunction, path: np.ndarray, tol: ToleranceConfig) -> complex:
    """log(S2/S2(0)) continued along a sampled path"""
    s0 = complex(s2.evaluate(0.0))
    ratio = s2.evaluate(path) / s0
    if np.any(np.abs(ratio) < 1e-300):
        raise PhaseUnwrapError("S2 vanishes on the continuation path")
    phases = np.unwrap(np.angle(ratio))
    if path.size > 1 and np.max(np.abs(np.diff(phases))) > tol.phase_jump:
        raise PhaseUnwrapError("phase jump above the unwrapping limit")
    return complex(math.log(abs(ratio[-1])), phases[-1])


def _segment(start: complex, end: complex, step: float) -> np.ndarray:
    count = max(1, int(math.ceil(abs(end - start) / step)))
    return start + (end - start) * np.linspace(0.0, 1.0, count + 1)


def _log_along(s2: ScatteringFunction, zeta: complex, tol: ToleranceConfig) -> complex:
    step = tol.phase_step
    for _ in range(8):
        path = np.concatenate([_segment(0, zeta.real, step), _segment(zeta.real, zeta, step)[1:]])
        try:
            return _continued_log(s2, path, tol)
        except PhaseUnwrapError:
            step /= 2
    raise PhaseUnwrapError(f"could not continue the phase to {zeta}")


def phase_shift(s2: ScatteringFunction, theta: float,
                tol: ToleranceConfig = DEFAULT_TOLERANCES) -> float:
    """delta(theta) with S2(theta) = S2(0) exp(2i delta), delta(0) = 0"""
    if s2.family is Family.CONSTANT:
        return 0.0
    return _log_along(s2, complex(float(theta)), tol).imag / 2


def complex_phase_shift(s2: ScatteringFunction, zeta: complex,
                        tol: ToleranceConfig = DEFAULT_TOLERANCES) -> complex:
    """delta continued into S(-kappa, kappa)"""
    if s2.family is Family.CONSTANT:
        return 0j
    if abs(complex(zeta).imag) >= kappa_of(s2):
        raise RegularityError(f"{zeta} lies outside the analyticity strip of delta")
    return _log_along(s2, complex(zeta), tol) / 2j


def srho(s2: ScatteringFunction, rho: Sequence[int], theta: Sequence[complex]) -> complex:
    """S^rho(theta) = prod over inversions l < k of S2(theta_rho(l) - theta_rho(k))"""
    theta = np.asarray(theta, dtype=complex)
    if len(rho) != theta.size:
        raise ValueError("permutation and rapidity vector differ in length")
    result = 1.0 + 0j
    for l, k in inversions(rho):
        result *= complex(s2.evaluate(theta[rho[l]] - theta[rho[k]]))
    return result


def y_factor(s2: ScatteringFunction, sign: int, zeta: Sequence[complex],
             tol: ToleranceConfig = DEFAULT_TOLERANCES) -> complex:
    """Y_n(zeta) = prod_{k<l} sign * exp(i delta(zeta_k - zeta_l))"""
    zeta = np.asarray(zeta, dtype=complex)
    result = 1.0 + 0j
    for k in range(zeta.size):
        for l in range(k + 1, zeta.size):
            result *= sign * np.exp(1j * complex_phase_shift(s2, zeta[k] - zeta[l], tol))
    return complex(result)


def tube_points(rng: np.random.Generator, n: int, count: int, width: float,
                spread: float = 3.0) -> np.ndarray:
    """Points theta - i lambda with lambda in pi/2 + (-width/2, width/2)^n"""
    real = rng.uniform(-spread, spread, size=(count, n))
    imag = -math.pi / 2 + rng.uniform(-width / 2, width / 2, size=(count, n))
    return real + 1j * imag
