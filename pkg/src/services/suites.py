"""
Verification suites behind the WedgeLab commands
"""

import itertools
import math
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from core.config import DEFAULT_TOLERANCES, RunConfig, ToleranceConfig
from core.logging import get_logger
from core.models import (
    Direction,
    FockVector,
    OperatorRep,
    RapidityGrid,
    RegularityData,
    ScatteringFunction,
    SectorTensor,
)
from services.fock import (
    FockSpace,
    dn_apply,
    exchange_residual,
    intertwine_residual,
    pn_project,
    random_symmetric,
    reflect,
    translate,
    zf_annihilate,
    zf_create,
    zf_exchange_residuals,
)
from services.formfactor import (
    acon,
    acon_direct,
    enumerate_contractions,
    gaussian_master_bound_report,
    lemma_tech_residual,
    lr_bound_ratio,
    srho_bound_check,
)
from services.nuclearity import NuclearitySweep, report_csv, report_summary
from services.scatfn import (
    cross_check_singularities,
    load_spec,
    regularity,
    singularities,
    validate_properties,
)
from services.scattering import (
    completeness_rank,
    in_state,
    moller_apply,
    out_state,
    projection_defect,
    s_matrix_apply,
    s_matrix_bruteforce,
)
from utils.helpers import compose, complex_pair, max_abs, numerical_rank

logger = get_logger("suites")

SUITE_ORDER = ("check", "fock-verify", "formfactor-verify", "nuclearity", "smatrix")

# caps for the dense checks
_FOCK_MAX_N = 4
_ZF_N = 4
_ZDN_MAX_N = 3
_SRHO_MAX_N = 3


@dataclass
class SuiteResult:
    name: str
    passed: bool
    report: Dict[str, Any]
    csv: Optional[str] = None


def _random_permutation(rng: np.random.Generator, n: int):
    return tuple(int(x) for x in rng.permutation(n))


def _expected_rank(sign: int, d: int, n: int) -> int:
    return math.comb(d, n) if sign == -1 else math.comb(d + n - 1, n)


class VerificationService:
    """Runs the suites for one RunConfig with a single seeded generator"""

    def __init__(self, run: RunConfig, tolerances: ToleranceConfig = DEFAULT_TOLERANCES):
        self.run = run
        self.tol = tolerances
        self.s2: Optional[ScatteringFunction] = None
        self.grid: Optional[RapidityGrid] = None
        self.reg: Optional[RegularityData] = None
        self.rng = np.random.default_rng(run.verification.seed)

    async def initialize(self):
        self.s2 = load_spec(self.run.spec_path, self.tol)
        g = self.run.grid
        self.grid = RapidityGrid.uniform(g.d, g.theta_min, g.theta_max, g.mass, g.weights_rule)
        self.reg = regularity(self.s2, self.run.verification.norm_margin, self.tol)
        logger.info("🔬 %s loaded: kappa=%.6g norm=%.6g sign=%+d",
                    self.s2.label, self.reg.kappa, self.reg.norm, self.reg.sign_class)

    async def execute(self) -> List[SuiteResult]:
        """The requested suite, or all of them in fixed order for report-all"""
        names = SUITE_ORDER if self.run.command == "report-all" else (self.run.command,)
        suites = {
            "check": self.check,
            "fock-verify": self.fock_verify,
            "formfactor-verify": self.formfactor_verify,
            "smatrix": self.smatrix,
        }
        results = []
        for name in names:
            logger.info("▶️ running %s", name)
            result = await self.nuclearity() if name == "nuclearity" else suites[name]()
            logger.info("%s %s", "✅" if result.passed else "❌", name)
            results.append(result)
        return results

    # =========================
    # check
    # =========================
    def check(self) -> SuiteResult:
        v = self.run.verification
        properties = validate_properties(self.s2, v.s2rel_samples, theta_range=v.s2rel_range)
        poles = singularities(self.s2)
        report = {
            "family": self.s2.label,
            "spec": self.s2.to_document(),
            "kappa": self.reg.kappa,
            "norm": self.reg.norm,
            "norm_kappa": self.reg.norm_kappa,
            "boundary_singular": self.reg.boundary_singular,
            "sup_location": self.reg.sup_location.value,
            "sign_class": self.reg.sign_class,
            "residuals": properties.to_dict(),
            "singularities": [complex_pair(p.location) for p in poles],
            "singularity_cross_check": cross_check_singularities(self.s2) if poles else 0.0,
        }
        return SuiteResult("check", bool(properties.passed(self.tol)), report)

    # =========================
    # fock-verify
    # =========================
    def fock_verify(self) -> SuiteResult:
        s2, grid, rng, tol = self.s2, self.grid, self.rng, self.tol
        n_max = max(2, min(self.run.verification.n, _FOCK_MAX_N))
        trials = self.run.verification.trials

        projector = {"idempotent": 0.0, "self_adjoint": 0.0, "exchange": 0.0, "ranks": {}}
        ranks_ok = True
        space = FockSpace(s2, grid, n_max)
        for n in range(n_max + 1):
            p = space.projector(n)
            projector["idempotent"] = max(projector["idempotent"], max_abs(p @ p - p))
            projector["self_adjoint"] = max(projector["self_adjoint"], max_abs(p - p.conj().T))
            rank = numerical_rank(p, tol.rank_threshold)
            expected = _expected_rank(self.reg.sign_class, grid.d, n)
            projector["ranks"][str(n)] = [rank, expected]
            ranks_ok = ranks_ok and rank == expected
            if n >= 2:
                t = SectorTensor(n, grid, rng.standard_normal((grid.d,) * n)
                                 + 1j * rng.standard_normal((grid.d,) * n))
                projector["exchange"] = max(projector["exchange"], exchange_residual(s2, pn_project(s2, t)))

        n = min(3, n_max)
        homomorphism = intertwining = 0.0
        for _ in range(trials):
            t = SectorTensor(n, grid, rng.standard_normal((grid.d,) * n) + 1j * rng.standard_normal((grid.d,) * n))
            rho, sigma = _random_permutation(rng, n), _random_permutation(rng, n)
            direct = dn_apply(s2, compose(rho, sigma), t).amplitudes
            nested = dn_apply(s2, rho, dn_apply(s2, sigma, t)).amplitudes
            homomorphism = max(homomorphism, max_abs(direct - nested))
            intertwining = max(intertwining, intertwine_residual(s2, t, rho, self.reg.sign_class))

        # sectors 0..2 populated, two empty sectors above
        zf_space = space if n_max >= _ZF_N else FockSpace(s2, grid, _ZF_N)
        strict = self.run.verification.strict_truncation
        zf = [0.0, 0.0, 0.0]
        bounds_ok = True
        truncated = False
        unitary = 0.0
        for _ in range(trials):
            physical = zf_space.random_physical(rng, guard=2)
            zf = [max(a, b) for a, b in zip(zf, zf_exchange_residuals(zf_space, physical.to_array()))]
            # permissive runs also exercise creation out of the top sector
            sample = FockVector.random(rng, grid, n_max, guard=1 if strict else 0)
            holds, cut = self._z_bounds_hold(sample, strict)
            bounds_ok = bounds_ok and holds
            truncated = truncated or cut
            guarded = FockVector.random(rng, grid, n_max, guard=2)
            x = tuple(rng.uniform(-1, 1, size=2))
            y = tuple(rng.uniform(-1, 1, size=2))
            composed = translate(x, translate(y, guarded))
            combined = translate((x[0] + y[0], x[1] + y[1]), guarded)
            unitary = max(unitary, max_abs(composed.to_array() - combined.to_array()),
                          abs(translate(x, guarded).norm() - guarded.norm()),
                          max_abs(reflect(reflect(guarded)).to_array() - guarded.to_array()))

        zdn = self._zdn_residual(min(_ZDN_MAX_N, n_max))
        report = {
            "family": s2.label,
            "d": grid.d,
            "n_max": n_max,
            "trials": trials,
            "projector": projector,
            "homomorphism": homomorphism,
            "intertwining": intertwining,
            "zf_mixed": zf[0],
            "zf_creation": zf[1],
            "zf_annihilation": zf[2],
            "z_bounds": bounds_ok,
            "truncation": "strict" if strict else "permissive",
            "truncated": truncated,
            "zdn": zdn,
            "translation_reflection": unitary,
        }
        passed = (
            projector["idempotent"] < tol.projector
            and projector["self_adjoint"] < tol.projector
            and projector["exchange"] < tol.projector
            and ranks_ok
            and homomorphism < tol.algebra
            and intertwining < tol.projector
            and max(zf) < tol.algebra
            and bounds_ok
            and zdn < tol.projector
            and unitary < tol.algebra
        )
        return SuiteResult("fock-verify", bool(passed), report)

    def _z_bounds_hold(self, vec: FockVector, strict: bool = True) -> Tuple[bool, bool]:
        """||z(psi) x|| <= ||psi|| ||N^(1/2) x|| and ||z+(psi) x|| <= ||psi|| ||(N+1)^(1/2) x||"""
        psi = self.rng.standard_normal(self.grid.d) + 1j * self.rng.standard_normal(self.grid.d)
        weights = np.array([s.norm() ** 2 for s in vec.sectors])
        number = np.arange(vec.n_max + 1)
        slack = 1 + 1e-12
        psi_norm = float(np.linalg.norm(psi))
        created = zf_create(self.s2, psi, vec, strict=strict)
        lower = zf_annihilate(self.s2, psi, vec).norm() <= slack * psi_norm * math.sqrt(np.sum(number * weights))
        upper = created.norm() <= slack * psi_norm * math.sqrt(np.sum((number + 1) * weights))
        return bool(lower and upper), created.truncated

    def _zdn_residual(self, n: int) -> float:
        """<z+_{i_1} ... z+_{i_n} Omega, Psi> against sqrt(n!) Psi_n(i) for Psi_n in the image of P_n"""
        grid, d = self.grid, self.grid.d
        t = SectorTensor(n, grid, self.rng.standard_normal((d,) * n) + 1j * self.rng.standard_normal((d,) * n))
        target = FockVector.from_sector(pn_project(self.s2, t))
        worst = 0.0
        for indices in itertools.product(range(d), repeat=n):
            vec = FockVector.vacuum(grid, n)
            for mode in reversed(indices):
                e = np.zeros(d)
                e[mode] = 1.0
                vec = zf_create(self.s2, e, vec)
            expected = math.sqrt(math.factorial(n)) * target.sector(n)[indices]
            worst = max(worst, abs(vec.inner(target) - expected))
        return worst

    # =========================
    # formfactor-verify
    # =========================
    def formfactor_verify(self) -> SuiteResult:
        s2, grid, rng, tol = self.s2, self.grid, self.rng, self.tol
        v = self.run.verification
        n = max(1, v.n)
        k_values = v.k_values if v.k_values is not None else list(range(n))
        max_res1 = max_res2 = 0.0
        for _ in range(v.trials):
            a = OperatorRep.random(rng, grid, n)
            for k in k_values:
                res1, res2 = lemma_tech_residual(s2, a, n, k)
                max_res1, max_res2 = max(max_res1, res1), max(max_res2, res2)

        a = OperatorRep.random(rng, grid, n, kind="unitary")
        dual = max(max_abs(acon(s2, a, n, k) - acon_direct(s2, a, n, k)) for k in k_values)
        lr_worst = max(lr_bound_ratio(s2, a, c, rng, trials=5)
                       for k in k_values for c in enumerate_contractions(n, k))
        srho = srho_bound_check(s2, min(n, _SRHO_MAX_N), rng, reg=self.reg) if n >= 2 else None
        master = gaussian_master_bound_report(s2, n, 0.5 * self.reg.kappa, rng)

        report = {
            "n": n,
            "k": k_values,
            "family": s2.label,
            "trials": v.trials,
            "max_res1": max_res1,
            "max_res2": max_res2,
            "dual_path": dual,
            "lr_bound_ratio": lr_worst,
            "srho_bound": srho,
            "gaussian_master_bound": master,
        }
        passed = (
            max_res1 < tol.lemma_residual
            and max_res2 < tol.lemma_residual
            and dual < tol.lemma_residual
            and lr_worst <= 1 + 1e-9
            and (srho is None or srho["passed"])
        )
        return SuiteResult("formfactor-verify", bool(passed), report)

    # =========================
    # nuclearity
    # =========================
    async def nuclearity(self) -> SuiteResult:
        config = self.run.nuclearity
        sweep = NuclearitySweep(self.s2, self.run.grid.mass, config, self.reg)
        result = await sweep.run(config.kappa_values)
        summary = report_summary(result)
        passed = bool(result.compton.get("passed", False))
        passed = passed and all(check["passed"] for check in result.checks.values())
        if self.reg.sign_class == -1:
            passed = passed and all(r.log10_bound_fermionic is not None for r in result.rows)
        return SuiteResult("nuclearity", passed, summary, csv=report_csv(result))

    # =========================
    # smatrix
    # =========================
    def smatrix(self) -> SuiteResult:
        s2, grid, rng, tol = self.s2, self.grid, self.rng, self.tol
        v = self.run.verification
        n = max(1, v.n)
        exclude = self.reg.sign_class == -1

        max_residual = isometry = image = 0.0
        for _ in range(v.trials):
            phi = random_symmetric(rng, grid, n, exclude_coincident=exclude)
            brute = s_matrix_bruteforce(s2, phi, tol).amplitudes
            closed = s_matrix_apply(s2, phi, tol)
            max_residual = max(max_residual, max_abs(brute - closed.amplitudes))
            for direction in Direction:
                mapped = moller_apply(s2, direction, phi, tol)
                isometry = max(isometry, abs(mapped.norm() - phi.norm()))
                image = max(image, projection_defect(s2, mapped))
            isometry = max(isometry, abs(closed.norm() - phi.norm()))

        states = self._collision_defect(n)
        rank, dim = completeness_rank(s2, n, grid, tol)
        report = {
            "family": s2.label,
            "n": n,
            "d": grid.d,
            "trials": v.trials,
            "max_residual": max_residual,
            "rank": rank,
            "dim": dim,
            "isometry": isometry,
            "moller_image": image,
            "collision_states": states,
        }
        passed = (
            max_residual < tol.smatrix_residual
            and rank == dim
            and isometry < tol.algebra * max(1, n)
            and image < tol.projector
            and (states is None or states < tol.projector)
        )
        return SuiteResult("smatrix", bool(passed), report)

    def _collision_defect(self, n: int) -> Optional[float]:
        """Distance of out/in states of block-supported wavefunctions from image(P_n)"""
        d = self.grid.d
        if n > d:
            return None
        blocks = np.array_split(np.arange(d), n)
        waves = []
        for block in blocks:
            psi = np.zeros(d, dtype=complex)
            psi[block] = self.rng.standard_normal(block.size) + 1j * self.rng.standard_normal(block.size)
            waves.append(psi)
        out = out_state(self.s2, self.grid, waves)
        incoming = in_state(self.s2, self.grid, waves)
        return max(projection_defect(self.s2, out), projection_defect(self.s2, incoming))


def results_frame(results: List[SuiteResult]) -> pd.DataFrame:
    """One row per suite with flattened scalar report fields"""
    rows = []
    for result in results:
        flat = pd.json_normalize(result.report, sep=".").iloc[0].to_dict()
        rows.append({"suite": result.name, "passed": result.passed,
                     **{key: value for key, value in flat.items() if not isinstance(value, (list, dict))}})
    return pd.DataFrame.from_records(rows)
