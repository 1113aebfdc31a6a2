"""
Nuclearity bounds: Hardy-norm factor, sigma(s, kappa), trace norms of the
kernel operators, the minimal splitting distance and the series bounds.

All quantities depend on m and s only through u = m*s; the estimators work
in u and convert back, so the s_min scaling in m is exact.
"""

import asyncio
import math
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import integrate, linalg, optimize, special

from core.config import NuclearityConfig
from core.errors import (
    BracketError,
    ConvergenceError,
    ModeError,
    ParameterRangeError,
    RegularityError,
)
from core.logging import get_logger
from core.models import (
    KernelDiscretization,
    NuclearityReport,
    NuclearityRow,
    RegularityData,
    ScatteringFunction,
    SeriesMode,
    TraceNormResult,
)
from services.scatfn import regularity, strip_norm
from utils.helpers import format_log10

logger = get_logger("nuclearity")

# exp(-(u/2) cosh Theta) < 1e-16  <=>  u cosh Theta > 2 ln(1e16)
_DAMPING_EXPONENT = 2 * math.log(1e16)

_EIGEN_FLOOR = 1e-12

CSV_COLUMNS = ["s", "kappa", "sigma", "t_trace", "product", "bound_bosonic", "fermionic_x", "bound_fermionic"]


def _check_positive(**values: float):
    for name, value in values.items():
        if not value > 0:
            raise ParameterRangeError(f"{name} must be positive, got {value}")


# =========================
# Hardy-norm factor and sigma
# =========================
def hardy_norm_factor(m: float, s: float, kappa: float) -> float:
    """(integral over R of exp(-m s cos(kappa) cosh(theta)))^(1/2)"""
    _check_positive(m=m, s=s, kappa=kappa)
    if kappa >= math.pi / 2:
        raise ParameterRangeError(f"kappa={kappa} must lie below pi/2")
    a = m * s * math.cos(kappa)
    upper = math.acosh(1 + 60 / a)
    # factor out exp(-a) so the integrand stays O(1)
    value, _ = integrate.quad(lambda t: math.exp(-a * (math.cosh(t) - 1)), 0, upper,
                              epsabs=0, epsrel=1e-12, limit=200)
    return math.sqrt(2 * math.exp(-a) * value)


def hardy_constant(s2: ScatteringFunction, kappa: float,
                   reg: Optional[RegularityData] = None, xatol: float = 1e-6) -> float:
    """(8/pi) ||S2||_w / sqrt(w - kappa), with w = kappa(S2) or optimized below it"""
    reg = regularity(s2) if reg is None else reg
    if not 0 < kappa < reg.kappa:
        raise ParameterRangeError(f"kappa={kappa} outside (0, {reg.kappa})")
    if not reg.boundary_singular:
        return 8 / math.pi * reg.norm / math.sqrt(reg.kappa - kappa)

    def objective(w: float) -> float:
        try:
            return strip_norm(s2, w) / math.sqrt(w - kappa)
        except RegularityError:
            return math.inf

    upper = reg.kappa * (1 - 1e-3)
    if upper <= kappa:
        raise ParameterRangeError(f"kappa={kappa} too close to kappa(S2)={reg.kappa}")
    result = optimize.minimize_scalar(objective, bounds=(kappa, upper), method="bounded",
                                      options={"xatol": xatol})
    logger.debug("hardy constant at kappa=%.6g: width %.6g, value %.6g", kappa, result.x, result.fun)
    return 8 / math.pi * float(result.fun)


def sigma_bound(s2: ScatteringFunction, m: float, s: float, kappa: float,
                reg: Optional[RegularityData] = None, constant: Optional[float] = None) -> float:
    """sigma(s, kappa) = hardy_constant * hardy_norm_factor"""
    constant = hardy_constant(s2, kappa, reg) if constant is None else constant
    return constant * hardy_norm_factor(m, s, kappa)


# =========================
# Kernel operators
# =========================
def t_kernel(m: float, s: float, kappa: float, theta: np.ndarray, theta_prime: np.ndarray) -> np.ndarray:
    """T_{s,kappa}(theta, theta') = exp(-(ms/2) cosh theta) / (i pi (theta' - theta - i kappa/2))"""
    theta = np.asarray(theta, dtype=float)[:, None]
    theta_prime = np.asarray(theta_prime, dtype=float)[None, :]
    return np.exp(-m * s / 2 * np.cosh(theta)) / (1j * math.pi * (theta_prime - theta - 0.5j * kappa))


def _half_range(u: float) -> float:
    return math.acosh(max(1.0, _DAMPING_EXPONENT / u))


def _gauss_legendre(count: int, half: float) -> Tuple[np.ndarray, np.ndarray]:
    nodes, weights = special.roots_legendre(count)
    return half * nodes, half * weights


def _weighted_profile(u: float, count: int, half: float) -> Tuple[np.ndarray, np.ndarray]:
    nodes, weights = _gauss_legendre(count, half)
    return nodes, np.sqrt(weights) * np.exp(-u / 2 * np.cosh(nodes))


def _sqrt_trace(matrix: np.ndarray) -> float:
    """tr M^(1/2) for positive semidefinite M"""
    eigenvalues = linalg.eigvalsh(matrix)
    # roundoff eigenvalues of size eps*|M| would add sqrt(eps) each
    kept = eigenvalues[eigenvalues > _EIGEN_FLOOR * eigenvalues[-1]]
    return float(np.sum(np.sqrt(kept)))


def _gram_trace(u: float, kappa: float, count: int, half: float) -> float:
    """tr (T T*)^(1/2); T T* has kernel (2/pi) a a' / (|kappa| - i sgn(kappa)(t - t'))"""
    nodes, profile = _weighted_profile(u, count, half)
    diff = nodes[:, None] - nodes[None, :]
    gram = (2 / math.pi) * np.outer(profile, profile) / (abs(kappa) - 1j * np.sign(kappa) * diff)
    return _sqrt_trace(gram)


def _kosaki_trace(u: float, kappa: float, count: int, half: float) -> float:
    """tr of (T_k T_k* + T_-k T_-k*)^(1/2)"""
    nodes, profile = _weighted_profile(u, count, half)
    diff = nodes[:, None] - nodes[None, :]
    kernel = (4 / math.pi) * np.outer(profile, profile) * abs(kappa) / (kappa ** 2 + diff ** 2)
    return _sqrt_trace(kernel)


def _power_of_two(value: float) -> int:
    return 1 << max(0, math.ceil(math.log2(max(value, 1.0))))


def _refine(evaluate: Callable[[int, float], float], u: float, kappa: float,
            disc: KernelDiscretization, tol: float) -> TraceNormResult:
    half = disc.half_range or _half_range(u)
    count = _power_of_two(max(disc.node_count, disc.nodes_per_ratio * half / abs(kappa)))
    history: List[Tuple[int, float]] = []
    previous = None
    for _ in range(disc.max_refinements + 1):
        value = evaluate(count, half)
        history.append((count, value))
        if previous is not None:
            if value == previous:
                delta = 0.0
            else:
                delta = abs(value - previous) / abs(value) if value else math.inf
            if delta < tol:
                return TraceNormResult(value, count, half, delta, history)
        previous = value
        count *= 2
        half += 0.25
    raise ConvergenceError(f"trace norm did not reach relative change {tol:g}", history)


def t_trace_norm(m: float, s: float, kappa: float,
                 disc: Optional[KernelDiscretization] = None,
                 tol: Optional[float] = None) -> TraceNormResult:
    """||T_{s,kappa}||_1, refined by node doubling and window growth"""
    _check_positive(m=m, s=s)
    if kappa == 0:
        raise ParameterRangeError("kappa must be nonzero")
    disc = KernelDiscretization() if disc is None else disc
    tol = disc.refinement_tol if tol is None else tol
    u = m * s
    result = _refine(lambda count, half: _gram_trace(u, kappa, count, half), u, kappa, disc, tol)
    logger.debug("trace norm u=%.6g kappa=%.6g: %.12g (history %s)", u, kappa, result.value, result.history)
    return result


def t_trace_norm_direct(m: float, s: float, kappa: float,
                        disc: Optional[KernelDiscretization] = None,
                        count: Optional[int] = None) -> float:
    """Sum of singular values of sqrt(w) T sqrt(w') on a widened theta' window"""
    _check_positive(m=m, s=s)
    disc = KernelDiscretization() if disc is None else disc
    u = m * s
    half = disc.half_range or _half_range(u)
    count = count or _power_of_two(max(disc.node_count, disc.nodes_per_ratio * half / abs(kappa)))
    factor = disc.theta_prime_factor
    theta, w = _gauss_legendre(count, half)
    theta_prime, w_prime = _gauss_legendre(int(count * factor), half * factor)
    matrix = np.sqrt(w)[:, None] * t_kernel(m, s, kappa, theta, theta_prime) * np.sqrt(w_prime)[None, :]
    return float(np.sum(linalg.svdvals(matrix)))


def kosaki_check(m: float, s: float, kappa: float,
                 disc: Optional[KernelDiscretization] = None) -> Tuple[float, float]:
    """(||T-hat_{s,kappa}||_1, 2 ||T_{s,kappa}||_1)"""
    _check_positive(m=m, s=s)
    if kappa == 0:
        raise ParameterRangeError("kappa must be nonzero")
    disc = KernelDiscretization() if disc is None else disc
    u = m * s
    lhs = _refine(lambda count, half: _kosaki_trace(u, kappa, count, half), u, kappa, disc,
                  disc.refinement_tol)
    rhs = 2 * t_trace_norm(m, s, kappa, disc).value
    return lhs.value, rhs


# =========================
# Series bounds
# =========================
def bosonic_series(x: float) -> float:
    """sum_n x^n, +inf when divergent"""
    if x < 0:
        raise ParameterRangeError("series argument must be non-negative")
    return 1 / (1 - x) if x < 1 else math.inf


def fermionic_series_log10(x: float) -> float:
    """log10 of sum_n x^n / sqrt(n!), summed past the peak until terms drop below 1e-16 of the total"""
    if x < 0:
        raise ParameterRangeError("series argument must be non-negative")
    if x == 0:
        return 0.0
    count = int(x * x + 40 * x + 200)
    n = np.arange(count)
    log_terms = n * math.log(x) - 0.5 * special.gammaln(n + 1)
    total = special.logsumexp(log_terms)
    if log_terms[-1] - total > math.log(1e-16):
        raise ConvergenceError(f"fermionic series at x={x} not converged after {count} terms")
    return float(total / math.log(10))


def fermionic_series(x: float) -> float:
    exponent = fermionic_series_log10(x)
    return 10 ** exponent if exponent < 308 else math.inf


def xi_norm_bound(s2: ScatteringFunction, m: float, s: float, kappa: float,
                  mode: SeriesMode = SeriesMode.BOSONIC,
                  disc: Optional[KernelDiscretization] = None,
                  reg: Optional[RegularityData] = None) -> float:
    """Bosonic geometric or fermionic factorial-damped bound on ||Xi(s)||_1"""
    mode = SeriesMode(mode)
    reg = regularity(s2) if reg is None else reg
    if mode is SeriesMode.FERMIONIC and reg.sign_class != -1:
        raise ModeError("the fermionic bound needs S2(0) = -1")
    product = sigma_bound(s2, m, s, kappa, reg) * t_trace_norm(m, s, kappa, disc).value
    if mode is SeriesMode.BOSONIC:
        return bosonic_series(product)
    return fermionic_series(product * math.sqrt(reg.norm))


# =========================
# Minimal splitting distance
# =========================
def _threshold_u(constant: float, kappa: float, disc: KernelDiscretization, tol: float,
                 bracket: Tuple[float, float], xtol: float,
                 guess: float = 1.0, growth: float = 2.0) -> float:
    """u = m s at which sigma * ||T||_1 = 1, for m = 1; the bracket grows from `guess` by `growth`"""

    def excess(u: float) -> float:
        product = constant * hardy_norm_factor(1.0, u, kappa) * t_trace_norm(1.0, u, kappa, disc, tol).value
        return math.log(product)

    low, high = guess, guess
    value = excess(guess)
    if value > 0:
        while value > 0:
            low, high = high, high * growth
            if high > bracket[1]:
                raise BracketError(f"threshold above u={bracket[1]:g} at kappa={kappa:.6g}")
            value = excess(high)
    else:
        while value <= 0:
            low, high = low / growth, low
            if low < bracket[0]:
                raise BracketError(f"threshold below u={bracket[0]:g} at kappa={kappa:.6g}")
            value = excess(low)
    return float(optimize.brentq(excess, low, high, xtol=xtol))


def kappa_lattice(kappa_max: float, points: int, search: Tuple[float, float]) -> List[float]:
    """Cell midpoints of search * kappa(S2)"""
    lo, hi = search
    return [kappa_max * (lo + (hi - lo) * (j + 0.5) / points) for j in range(points)]


def discretization_from(config: NuclearityConfig) -> KernelDiscretization:
    return KernelDiscretization(
        node_count=config.min_nodes,
        refinement_tol=config.refinement_tol,
        max_refinements=config.max_refinements,
        nodes_per_ratio=config.nodes_per_ratio,
        theta_prime_factor=config.theta_prime_factor,
    )


class _ThresholdSearch:
    """Threshold u(kappa) with hardy constants cached per kappa"""

    def __init__(self, s2: ScatteringFunction, config: NuclearityConfig, reg: RegularityData):
        self.s2 = s2
        self.config = config
        self.reg = reg
        self.disc = discretization_from(config)
        self._constants: Dict[Tuple[float, float], float] = {}
        self.evaluations = 0

    def constant(self, kappa: float, xatol: float = 1e-6) -> float:
        key = (kappa, xatol)
        if key not in self._constants:
            self._constants[key] = hardy_constant(self.s2, kappa, self.reg, xatol)
        return self._constants[key]

    def __call__(self, kappa: float, tol: float, xtol: float,
                 guess: float = 1.0, growth: float = 2.0, xatol: float = 1e-6) -> float:
        self.evaluations += 1
        try:
            return _threshold_u(self.constant(kappa, xatol), kappa, self.disc, tol, self.config.s_bracket,
                                xtol, guess, growth)
        except BracketError as e:
            logger.warning("%s", e)
            return math.inf


async def s_min_async(s2: ScatteringFunction, m: float, config: Optional[NuclearityConfig] = None,
                      reg: Optional[RegularityData] = None) -> Tuple[float, float]:
    """kappa-optimized bosonic threshold.

    A coarse concurrent scan of the kappa lattice picks the best cell, its
    neighbours are rescored at full accuracy, and a bounded golden-section
    search between them polishes kappa. Later stages seed the u bracket with
    the values already found.
    """
    _check_positive(m=m)
    config = NuclearityConfig() if config is None else config
    reg = regularity(s2) if reg is None else reg
    threshold = _ThresholdSearch(s2, config, reg)
    tol = config.search_refinement_tol
    xtol = config.bisection_tol * m
    growth = config.seed_growth

    lattice = kappa_lattice(reg.kappa, config.lattice_points, config.kappa_search)
    semaphore = asyncio.Semaphore(max(1, config.workers))

    async def bounded(*args) -> float:
        async with semaphore:
            return await asyncio.to_thread(threshold, *args)

    coarse = await asyncio.gather(*(
        bounded(kappa, config.scan_tol, config.scan_xtol * m, 1.0, 2.0, config.scan_xtol) for kappa in lattice
    ))
    best = int(np.argmin(coarse))
    if not math.isfinite(coarse[best]):
        raise BracketError(f"no kappa in the lattice brackets the threshold inside {config.s_bracket}")

    cells = list(range(max(best - 1, 0), min(best + 2, len(lattice))))
    rescored = await asyncio.gather(*(
        bounded(lattice[j], tol, xtol, coarse[j], growth) if math.isfinite(coarse[j])
        else bounded(lattice[j], tol, xtol)
        for j in cells
    ))
    values = dict(zip(cells, rescored))
    best = min(values, key=values.get)
    u_star, kappa_star = values[best], lattice[best]
    if not math.isfinite(u_star):
        raise BracketError(f"threshold lost at full accuracy near kappa={kappa_star:.6g}")

    lower = lattice[max(best - 1, 0)]
    upper = lattice[min(best + 1, len(lattice) - 1)]
    if upper > lower:
        refined = await asyncio.to_thread(
            optimize.minimize_scalar,
            lambda kappa: threshold(kappa, tol, xtol, u_star, growth),
            bounds=(lower, upper),
            method="bounded",
            options={"xatol": config.kappa_xtol * reg.kappa, "maxiter": config.refine_maxiter},
        )
        if refined.fun < u_star:
            u_star, kappa_star = float(refined.fun), float(refined.x)
    logger.info("%s: s_min=%.9g at kappa=%.6g (m=%g, %d threshold solves)",
                s2.label, u_star / m, kappa_star, m, threshold.evaluations)
    return u_star / m, kappa_star


def s_min(s2: ScatteringFunction, m: float, config: Optional[NuclearityConfig] = None,
          reg: Optional[RegularityData] = None) -> Tuple[float, float]:
    return asyncio.run(s_min_async(s2, m, config, reg))


COMPTON_CONVENTIONS = ("reduced", "full")


def compton_report(s_min_value: float, m: float, convention: str = "reduced") -> Dict[str, object]:
    """s_min against the Compton length, 1/m (reduced) or 2 pi/m (full); margins may be negative"""
    if convention not in COMPTON_CONVENTIONS:
        raise ParameterRangeError(f"unknown Compton convention {convention!r}")
    reduced, full = 1 / m, 2 * math.pi / m
    limit = reduced if convention == "reduced" else full
    return {
        "convention": convention,
        "limit": limit,
        "s_min": s_min_value,
        "margin": limit - s_min_value,
        "reduced": reduced,
        "full": full,
        "margin_reduced": reduced - s_min_value,
        "margin_full": full - s_min_value,
        "passed": s_min_value < limit,
    }


# =========================
# Parameter sweep
# =========================
class NuclearitySweep:
    """Rows over s x kappa, evaluated concurrently and assembled in input order"""

    def __init__(self, s2: ScatteringFunction, mass: float, config: Optional[NuclearityConfig] = None,
                 reg: Optional[RegularityData] = None):
        _check_positive(mass=mass)
        self.s2 = s2
        self.mass = mass
        self.config = NuclearityConfig() if config is None else config
        self.reg = regularity(s2) if reg is None else reg
        self.disc = discretization_from(self.config)
        self._constants: Dict[float, float] = {}

    def _constant(self, kappa: float) -> float:
        if kappa not in self._constants:
            self._constants[kappa] = hardy_constant(self.s2, kappa, self.reg)
        return self._constants[kappa]

    def row(self, s: float, kappa: float) -> NuclearityRow:
        sigma = self._constant(kappa) * hardy_norm_factor(self.mass, s, kappa)
        trace = t_trace_norm(self.mass, s, kappa, self.disc)
        doubled = _gram_trace(self.mass * s, kappa, 2 * trace.nodes, trace.half_range)
        product = sigma * trace.value
        bosonic = bosonic_series(product)
        fermionic_x, log10_fermionic = None, None
        if self.reg.sign_class == -1:
            fermionic_x = product * math.sqrt(self.reg.norm)
            log10_fermionic = fermionic_series_log10(fermionic_x)
        return NuclearityRow(
            s=s,
            kappa=kappa,
            sigma=sigma,
            t_trace=trace.value,
            product=product,
            bound_bosonic=bosonic if math.isfinite(bosonic) else None,
            fermionic_x=fermionic_x,
            log10_bound_fermionic=log10_fermionic,
            refinement_delta=trace.delta,
            stability=abs(doubled - trace.value) / trace.value,
        )

    def _kosaki_case(self, m: float, s: float, kappa: float) -> Dict[str, object]:
        lhs, rhs = kosaki_check(m, s, kappa, self.disc)
        return {"m": m, "s": s, "kappa": kappa, "lhs": lhs, "rhs": rhs, "holds": lhs <= rhs * (1 + 1e-8)}

    async def checks(self, rows: Sequence[NuclearityRow], s_min_value: Optional[float],
                     kappa_star: Optional[float]) -> Dict[str, Dict[str, object]]:
        """Kosaki lattice, monotonicity in s, bosonic divergence below s_min, refinement stability"""
        config = self.config
        semaphore = asyncio.Semaphore(max(1, config.workers))

        async def bounded(fn, *args):
            async with semaphore:
                return await asyncio.to_thread(fn, *args)

        lattice = [
            (self.mass * a, s, self.reg.kappa * b)
            for a in config.kosaki_mass_scales
            for s in config.kosaki_s_values
            for b in config.kosaki_kappa_fractions
        ]
        cases = await asyncio.gather(*(bounded(self._kosaki_case, *point) for point in lattice))
        kosaki = {"cases": len(cases), "worst_ratio": max(c["lhs"] / c["rhs"] for c in cases),
                  "passed": all(c["holds"] for c in cases)}

        monotone = True
        for kappa in dict.fromkeys(r.kappa for r in rows):
            ordered = sorted((r for r in rows if r.kappa == kappa), key=lambda r: r.s)
            for a, b in zip(ordered, ordered[1:]):
                if a.s < b.s and not (a.sigma > b.sigma and a.t_trace > b.t_trace):
                    logger.warning("sigma or trace norm not decreasing between s=%g and s=%g at kappa=%.6g",
                                   a.s, b.s, kappa)
                    monotone = False
        monotonicity = {"passed": monotone}

        below = [s for s in config.s_values if s_min_value is not None and s < s_min_value]
        if below and kappa_star is not None:
            below_row = await bounded(self.row, min(below), kappa_star)
            divergence = {"s": below_row.s, "kappa": kappa_star, "product": below_row.product,
                          "passed": below_row.bound_bosonic is None}
        else:
            # no sampled s below s_min
            divergence = {"s": None, "kappa": kappa_star, "product": None, "passed": True}

        worst = max((r.stability for r in rows), default=0.0)
        stability = {"tol": config.stability_tol, "max_change": worst, "passed": worst < config.stability_tol}

        return {"kosaki": kosaki, "monotonicity": monotonicity,
                "bosonic_divergence": divergence, "stability": stability}

    async def run(self, kappa_values: Optional[Sequence[float]] = None,
                  with_s_min: bool = True, with_checks: bool = True) -> NuclearityReport:
        s_min_value, kappa_star = None, None
        if with_s_min:
            s_min_value, kappa_star = await s_min_async(self.s2, self.mass, self.config, self.reg)

        kappas = kappa_values or self.config.kappa_values
        if not kappas:
            kappas = [kappa_star] if kappa_star is not None else [0.5 * self.reg.kappa]
        # hardy constants first, so worker threads only read the cache
        for kappa in kappas:
            self._constant(kappa)

        semaphore = asyncio.Semaphore(max(1, self.config.workers))

        async def bounded(s: float, kappa: float) -> NuclearityRow:
            async with semaphore:
                return await asyncio.to_thread(self.row, s, kappa)

        rows = await asyncio.gather(*(bounded(s, k) for s in self.config.s_values for k in kappas))
        report = NuclearityReport(
            family=self.s2.label,
            mass=self.mass,
            rows=list(rows),
            s_min=s_min_value,
            kappa_star=kappa_star,
            convergence={
                "refinement_tol": self.disc.refinement_tol,
                "max_delta": max((r.refinement_delta for r in rows), default=0.0),
            },
        )
        if s_min_value is not None:
            report.compton = compton_report(s_min_value, self.mass, self.config.compton_convention)
        if with_checks:
            report.checks = await self.checks(report.rows, s_min_value, kappa_star)
        return report


def report_frame(report: NuclearityReport) -> pd.DataFrame:
    records = []
    for row in report.rows:
        records.append({
            "s": row.s,
            "kappa": row.kappa,
            "sigma": row.sigma,
            "t_trace": row.t_trace,
            "product": row.product,
            "bound_bosonic": "divergent" if row.bound_bosonic is None else repr(row.bound_bosonic),
            "fermionic_x": "" if row.fermionic_x is None else row.fermionic_x,
            "bound_fermionic": "" if row.log10_bound_fermionic is None else format_log10(row.log10_bound_fermionic),
        })
    return pd.DataFrame.from_records(records, columns=CSV_COLUMNS)


def report_csv(report: NuclearityReport) -> str:
    return report_frame(report).to_csv(index=False, float_format="%.12g", lineterminator="\n")


def report_summary(report: NuclearityReport) -> Dict[str, object]:
    return {
        "family": report.family,
        "mass": report.mass,
        "s_min": report.s_min,
        "kappa_star": report.kappa_star,
        "compton": report.compton,
        "convergence": report.convergence,
        "checks": report.checks,
        "rows": report_frame(report).to_dict(orient="records"),
    }
