"""
Configuration management for WedgeLab
"""

import math
import os
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Optional, Dict, Any, List, Tuple

import yaml
from dotenv import load_dotenv

from .errors import ConfigurationError


@dataclass(frozen=True)
class ToleranceConfig:
    """Numerical tolerances shared by all services"""
    pole_proximity: float = 1e-12
    unit_modulus: float = 1e-12
    s2rel: float = 1e-10
    sign_class: float = 1e-10
    closure: float = 1e-12
    norm_refine: float = 1e-6
    norm_asymptote: float = 1e-8
    phase_step: float = 0.01
    phase_jump: float = math.pi / 2
    algebra: float = 1e-12
    projector: float = 1e-11
    rank_threshold: float = 1e-8
    support_threshold: float = 1e-14
    symmetric_input: float = 1e-10
    lemma_residual: float = 1e-9
    smatrix_residual: float = 1e-10


DEFAULT_TOLERANCES = ToleranceConfig()


@dataclass
class GridConfig:
    """Rapidity grid used by the algebraic suites"""
    d: int = 4
    theta_min: float = -2.0
    theta_max: float = 2.0
    mass: float = 1.0
    weights_rule: str = "unit"


@dataclass
class VerificationConfig:
    """Randomized verification suites"""
    n: int = 3
    k_values: Optional[List[int]] = None
    trials: int = 20
    seed: int = 7
    strict_truncation: bool = True
    # fraction of kappa(S2) used for the norm when a pole sits on the boundary
    norm_margin: float = 0.5
    s2rel_samples: int = 1000
    s2rel_range: float = 15.0


@dataclass
class NuclearityConfig:
    """Nuclearity estimator and parameter sweep"""
    s_values: List[float] = field(default_factory=lambda: [0.05, 0.1, 0.5, 1.0, 2.0])
    kappa_values: Optional[List[float]] = None
    refinement_tol: float = 1e-8
    max_refinements: int = 6
    min_nodes: int = 16
    nodes_per_ratio: float = 6.0
    theta_prime_factor: float = 4.0
    lattice_points: int = 32
    kappa_search: Tuple[float, float] = (0.1, 0.9)
    search_refinement_tol: float = 1e-6
    bisection_tol: float = 1e-6
    s_bracket: Tuple[float, float] = (1e-4, 1e4)
    # coarse kappa scan, then seeded refinement at search_refinement_tol
    scan_tol: float = 1e-4
    scan_xtol: float = 1e-3
    kappa_xtol: float = 1e-4
    refine_maxiter: int = 30
    seed_growth: float = 1.05
    compton_convention: str = "reduced"
    workers: int = 4
    # suite checks
    kosaki_mass_scales: Tuple[float, ...] = (0.5, 1.0, 2.0)
    kosaki_s_values: Tuple[float, ...] = (0.5, 1.0, 2.0)
    kosaki_kappa_fractions: Tuple[float, ...] = (0.25, 0.5, 0.75)
    stability_tol: float = 1e-6


@dataclass
class OutputConfig:
    """Artifact output and logging"""
    format: str = "json"
    path: Optional[str] = None
    log_level: str = "INFO"
    log_file: Optional[str] = None


def _env_bool(name: str, default: str) -> bool:
    return os.getenv(name, default).lower() == "true"


def _env_floats(name: str) -> Optional[List[float]]:
    raw = os.getenv(name)
    if not raw:
        return None
    return [float(x.strip()) for x in raw.split(",")]


class Settings:
    """Main settings class"""

    def __init__(self, env_file: str = "config/.env"):
        # Load environment variables
        load_dotenv(env_file)

        # Initialize configurations
        self.tolerances = self._init_tolerances()
        self.grid = self._init_grid()
        self.verification = self._init_verification()
        self.nuclearity = self._init_nuclearity()
        self.output = self._init_output()

        # Validate configuration
        self.validate()

    def _init_tolerances(self) -> ToleranceConfig:
        return ToleranceConfig(
            unit_modulus=float(os.getenv("WEDGELAB_TOL_UNIT_MODULUS", "1e-12")),
            closure=float(os.getenv("WEDGELAB_TOL_CLOSURE", "1e-12")),
            s2rel=float(os.getenv("WEDGELAB_TOL_S2REL", "1e-10")),
            norm_refine=float(os.getenv("WEDGELAB_TOL_NORM_REFINE", "1e-6")),
            projector=float(os.getenv("WEDGELAB_TOL_PROJECTOR", "1e-11")),
            rank_threshold=float(os.getenv("WEDGELAB_TOL_RANK", "1e-8")),
            lemma_residual=float(os.getenv("WEDGELAB_TOL_LEMMA", "1e-9")),
            smatrix_residual=float(os.getenv("WEDGELAB_TOL_SMATRIX", "1e-10")),
        )

    def _init_grid(self) -> GridConfig:
        return GridConfig(
            d=int(os.getenv("WEDGELAB_GRID_D", "4")),
            theta_min=float(os.getenv("WEDGELAB_GRID_MIN", "-2.0")),
            theta_max=float(os.getenv("WEDGELAB_GRID_MAX", "2.0")),
            mass=float(os.getenv("WEDGELAB_MASS", "1.0")),
            weights_rule=os.getenv("WEDGELAB_GRID_WEIGHTS", "unit"),
        )

    def _init_verification(self) -> VerificationConfig:
        k_values = None
        if os.getenv("WEDGELAB_K"):
            k_values = [int(x.strip()) for x in os.getenv("WEDGELAB_K").split(",")]

        return VerificationConfig(
            n=int(os.getenv("WEDGELAB_N", "3")),
            k_values=k_values,
            trials=int(os.getenv("WEDGELAB_TRIALS", "20")),
            seed=int(os.getenv("WEDGELAB_SEED", "7")),
            strict_truncation=_env_bool("WEDGELAB_STRICT_TRUNCATION", "true"),
            norm_margin=float(os.getenv("WEDGELAB_NORM_MARGIN", "0.5")),
        )

    def _init_nuclearity(self) -> NuclearityConfig:
        config = NuclearityConfig(
            kappa_values=_env_floats("WEDGELAB_KAPPA"),
            refinement_tol=float(os.getenv("WEDGELAB_REFINEMENT_TOL", "1e-8")),
            max_refinements=int(os.getenv("WEDGELAB_MAX_REFINEMENTS", "6")),
            lattice_points=int(os.getenv("WEDGELAB_LATTICE_POINTS", "32")),
            bisection_tol=float(os.getenv("WEDGELAB_BISECTION_TOL", "1e-6")),
            scan_tol=float(os.getenv("WEDGELAB_SCAN_TOL", "1e-4")),
            stability_tol=float(os.getenv("WEDGELAB_STABILITY_TOL", "1e-6")),
            compton_convention=os.getenv("WEDGELAB_COMPTON", "reduced"),
            workers=int(os.getenv("WEDGELAB_WORKERS", "4")),
        )
        s_values = _env_floats("WEDGELAB_S")
        if s_values:
            config.s_values = s_values
        return config

    def _init_output(self) -> OutputConfig:
        return OutputConfig(
            format=os.getenv("WEDGELAB_FORMAT", "json"),
            path=os.getenv("WEDGELAB_OUT"),
            log_level=os.getenv("LOG_LEVEL", "INFO"),
            log_file=os.getenv("LOG_FILE"),
        )

    def validate(self):
        """Validate configuration"""
        errors = []

        if self.grid.d < 1:
            errors.append("WEDGELAB_GRID_D must be positive")

        if self.grid.theta_max <= self.grid.theta_min:
            errors.append("WEDGELAB_GRID_MAX must exceed WEDGELAB_GRID_MIN")

        if self.grid.mass <= 0:
            errors.append("WEDGELAB_MASS must be positive")

        if self.grid.weights_rule not in ("unit", "trapezoid", "gauss-legendre"):
            errors.append(f"unknown weights rule {self.grid.weights_rule!r}")

        if not 0 < self.verification.norm_margin < 1:
            errors.append("WEDGELAB_NORM_MARGIN must lie in (0, 1)")

        if any(s <= 0 for s in self.nuclearity.s_values):
            errors.append("WEDGELAB_S entries must be positive")

        if self.nuclearity.lattice_points < 32:
            errors.append("WEDGELAB_LATTICE_POINTS must be at least 32")

        if self.nuclearity.compton_convention not in ("reduced", "full"):
            errors.append("WEDGELAB_COMPTON must be 'reduced' or 'full'")

        if self.output.format not in ("csv", "json"):
            errors.append("WEDGELAB_FORMAT must be 'csv' or 'json'")

        if errors:
            raise ConfigurationError(f"Configuration errors: {', '.join(errors)}")

    def to_dict(self) -> Dict[str, Any]:
        """Convert settings to dictionary (for logging)"""
        return {
            "tolerances": asdict(self.tolerances),
            "grid": asdict(self.grid),
            "verification": {
                "n": self.verification.n,
                "trials": self.verification.trials,
                "seed": self.verification.seed,
                "strict_truncation": self.verification.strict_truncation,
                "norm_margin": self.verification.norm_margin,
            },
            "nuclearity": {
                "s_values": self.nuclearity.s_values,
                "refinement_tol": self.nuclearity.refinement_tol,
                "lattice_points": self.nuclearity.lattice_points,
                "compton_convention": self.nuclearity.compton_convention,
                "workers": self.nuclearity.workers,
            },
            "output": asdict(self.output),
        }


COMMANDS = ("check", "fock-verify", "formfactor-verify", "nuclearity", "smatrix", "report-all")


@dataclass
class RunConfig:
    """One CLI invocation"""
    command: str
    spec_path: str
    grid: GridConfig = field(default_factory=GridConfig)
    verification: VerificationConfig = field(default_factory=VerificationConfig)
    nuclearity: NuclearityConfig = field(default_factory=NuclearityConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    @classmethod
    def from_settings(cls, command: str, spec_path: str, settings: Settings) -> "RunConfig":
        return cls(
            command=command,
            spec_path=spec_path,
            grid=GridConfig(**asdict(settings.grid)),
            verification=VerificationConfig(**asdict(settings.verification)),
            nuclearity=NuclearityConfig(**asdict(settings.nuclearity)),
            output=OutputConfig(**asdict(settings.output)),
        )

    def apply_yaml(self, path: str) -> "RunConfig":
        """Overlay sections from a YAML run document"""
        try:
            document = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
        except yaml.YAMLError as e:
            raise ConfigurationError(f"invalid YAML in {path}: {e}") from e

        if not isinstance(document, dict):
            raise ConfigurationError(f"{path} must contain a mapping")

        sections = {
            "grid": self.grid,
            "verification": self.verification,
            "nuclearity": self.nuclearity,
            "output": self.output,
        }
        for name, values in document.items():
            if name == "spec":
                self.spec_path = str(values)
                continue
            if name not in sections or not isinstance(values, dict):
                raise ConfigurationError(f"unknown section {name!r} in {path}")
            target = sections[name]
            for key, value in values.items():
                if not hasattr(target, key):
                    raise ConfigurationError(f"unknown key {name}.{key} in {path}")
                if isinstance(getattr(target, key), tuple):
                    value = tuple(value)
                setattr(target, key, value)
        return self

    def validate(self):
        errors = []

        if self.command not in COMMANDS:
            errors.append(f"unknown command {self.command!r}")

        if not self.spec_path.startswith("preset:") and not Path(self.spec_path).is_file():
            errors.append(f"spec file {self.spec_path} does not exist")

        if self.grid.d < 1 or self.grid.theta_max <= self.grid.theta_min:
            errors.append("grid must have d >= 1 and min < max")

        if self.grid.mass <= 0:
            errors.append("mass must be positive")

        if self.verification.n < 0:
            errors.append("n must be non-negative")

        if any(s <= 0 for s in self.nuclearity.s_values):
            errors.append("s-list entries must be positive")

        if self.nuclearity.lattice_points < 32:
            errors.append("kappa lattice needs at least 32 points")

        if self.nuclearity.compton_convention not in ("reduced", "full"):
            errors.append(f"unknown Compton convention {self.nuclearity.compton_convention!r}")

        if not 0 < self.nuclearity.scan_tol < 1 or not 0 < self.nuclearity.stability_tol < 1:
            errors.append("scan and stability tolerances must lie in (0, 1)")

        if self.output.format not in ("csv", "json"):
            errors.append("format must be csv or json")

        if errors:
            raise ConfigurationError(f"Run configuration errors: {', '.join(errors)}")
