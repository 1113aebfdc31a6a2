import math
import time

import numpy as np
import pytest
from scipy import special

from core.config import NuclearityConfig
from core.errors import ModeError, ParameterRangeError
from core.models import KernelDiscretization, NuclearityRow, SeriesMode
from services.nuclearity import (
    CSV_COLUMNS,
    NuclearitySweep,
    bosonic_series,
    compton_report,
    fermionic_series,
    fermionic_series_log10,
    hardy_constant,
    hardy_norm_factor,
    kappa_lattice,
    kosaki_check,
    report_csv,
    s_min,
    sigma_bound,
    t_kernel,
    t_trace_norm,
    t_trace_norm_direct,
    xi_norm_bound,
    _threshold_u,
)
from services.scatfn import regularity


# =========================
# Hardy-norm factor and sigma
# =========================
@pytest.mark.parametrize("m, s, kappa", [(1.0, 1.0, 0.5), (2.0, 0.3, 1.2), (0.5, 4.0, 0.1)])
def test_hardy_factor_is_bessel(m, s, kappa):
    expected = 2 * special.k0(m * s * math.cos(kappa))
    assert hardy_norm_factor(m, s, kappa) ** 2 == pytest.approx(expected, rel=1e-9)


def test_hardy_factor_monotone():
    by_s = [hardy_norm_factor(1.0, s, 0.5) for s in (0.1, 0.5, 1.0, 2.0)]
    by_kappa = [hardy_norm_factor(1.0, 1.0, k) for k in (0.1, 0.5, 1.0, 1.5, 1.57)]
    assert all(a > b for a, b in zip(by_s, by_s[1:]))
    assert all(a < b for a, b in zip(by_kappa, by_kappa[1:]))


@pytest.mark.parametrize("kwargs", [
    {"m": 1.0, "s": 1.0, "kappa": math.pi / 2},
    {"m": 1.0, "s": 0.0, "kappa": 0.5},
    {"m": -1.0, "s": 1.0, "kappa": 0.5},
])
def test_hardy_factor_range(kwargs):
    with pytest.raises(ParameterRangeError):
        hardy_norm_factor(**kwargs)


def test_sigma_for_constant_family(ising):
    kappa, s = 0.6, 1.3
    expected = 8 / math.pi / math.sqrt(math.pi / 2 - kappa) * math.sqrt(2 * special.k0(s * math.cos(kappa)))
    assert sigma_bound(ising, 1.0, s, kappa) == pytest.approx(expected, rel=1e-9)


def test_sigma_decays(bound_state):
    reg = regularity(bound_state)
    constant = hardy_constant(bound_state, 0.4, reg)
    values = [sigma_bound(bound_state, 1.0, s, 0.4, reg, constant) for s in (0.1, 1.0, 10.0, 100.0)]
    assert all(a > b for a, b in zip(values, values[1:]))
    assert values[-1] < 1e-15


def test_hardy_constant_range(sinh_gordon):
    with pytest.raises(ParameterRangeError):
        hardy_constant(sinh_gordon, 1.2)


# =========================
# Kernel operators
# =========================
def test_kernel_value():
    value = t_kernel(1.0, 1.0, 0.5, np.array([0.0]), np.array([0.0]))[0, 0]
    assert value == pytest.approx(math.exp(-0.5) / (0.25 * math.pi))


def test_trace_norm_positive_and_decreasing():
    values = [t_trace_norm(1.0, s, 0.5).value for s in (0.5, 1.0, 2.0)]
    assert values[0] > 0
    assert all(a > b for a, b in zip(values, values[1:]))


def test_trace_norm_is_even_in_kappa():
    plus = t_trace_norm(1.0, 1.0, 0.5).value
    minus = t_trace_norm(1.0, 1.0, -0.5).value
    assert plus == pytest.approx(minus, rel=1e-10)


def test_trace_norm_stable_under_refinement():
    coarse = t_trace_norm(1.0, 1.0, 0.7, KernelDiscretization(node_count=16))
    fine = t_trace_norm(1.0, 1.0, 0.7, KernelDiscretization(node_count=128))
    assert coarse.value == pytest.approx(fine.value, rel=1e-6)
    assert coarse.history[-1] == (coarse.nodes, coarse.value)


def test_trace_norm_depends_on_u_only():
    assert t_trace_norm(2.0, 0.5, 0.5).value == pytest.approx(t_trace_norm(1.0, 1.0, 0.5).value, rel=1e-12)


def test_direct_trace_norm_is_comparable():
    gram = t_trace_norm(1.0, 1.0, 0.5).value
    direct = t_trace_norm_direct(1.0, 1.0, 0.5, count=256)
    assert 0.5 * gram < direct < 1.5 * gram


def test_trace_norm_rejects_zero_kappa():
    with pytest.raises(ParameterRangeError):
        t_trace_norm(1.0, 1.0, 0.0)


def test_kosaki_inequality():
    lhs, rhs = kosaki_check(1.0, 1.0, 0.5)
    assert lhs <= rhs * (1 + 1e-8)


@pytest.mark.slow
@pytest.mark.parametrize("s", [0.2, 1.0, 3.0])
def test_kosaki_inequality_on_lattice(s):
    for kappa in kappa_lattice(math.pi / 2, 32, (0.1, 0.9))[::4]:
        lhs, rhs = kosaki_check(1.0, s, kappa)
        assert lhs <= rhs * (1 + 1e-8)


# =========================
# Series
# =========================
def test_bosonic_series():
    assert bosonic_series(0.0) == 1
    assert bosonic_series(0.5) == 2
    assert bosonic_series(1.0) == math.inf
    with pytest.raises(ParameterRangeError):
        bosonic_series(-0.1)


def test_fermionic_series():
    expected = sum(1 / math.sqrt(math.factorial(n)) for n in range(80))
    assert fermionic_series(1.0) == pytest.approx(expected, rel=1e-12)
    assert fermionic_series_log10(0.0) == 0.0
    assert math.isfinite(fermionic_series_log10(50.0))
    assert fermionic_series_log10(50.0) > fermionic_series_log10(40.0)


def test_fermionic_mode_needs_fermi_statistics(bound_state):
    with pytest.raises(ModeError):
        xi_norm_bound(bound_state, 1.0, 1.0, 0.3, SeriesMode.FERMIONIC)


def test_bosonic_bound_for_large_distance(ising):
    assert math.isfinite(xi_norm_bound(ising, 1.0, 5.0, 0.7, SeriesMode.BOSONIC))


# =========================
# Minimal splitting distance
# =========================
def test_kappa_lattice():
    lattice = kappa_lattice(1.0, 32, (0.1, 0.9))
    assert len(lattice) == 32
    assert lattice[0] == pytest.approx(0.1125)
    assert all(0.1 < k < 0.9 for k in lattice)
    assert lattice == sorted(lattice)


def test_compton_report():
    report = compton_report(0.9, 1.0)
    assert report["convention"] == "reduced"
    assert report["passed"]
    assert report["limit"] == 1.0
    assert report["margin"] == pytest.approx(0.1)
    assert report["full"] == pytest.approx(2 * math.pi)
    assert report["margin_reduced"] == pytest.approx(0.1)


def test_compton_report_is_strict_by_default():
    report = compton_report(1.5, 1.0)
    assert not report["passed"]
    assert report["margin"] == pytest.approx(-0.5)
    assert report["margin_full"] == pytest.approx(2 * math.pi - 1.5)
    full = compton_report(1.5, 1.0, "full")
    assert full["passed"]
    assert full["margin"] == pytest.approx(2 * math.pi - 1.5)


def test_compton_report_rejects_unknown_convention():
    with pytest.raises(ParameterRangeError):
        compton_report(0.5, 1.0, "half")


@pytest.mark.slow
def test_s_min_fermi_family(ising):
    value, kappa_star = s_min(ising, 1.0)
    assert 0 < value < 2 * math.pi
    assert 0 < kappa_star < math.pi / 2


@pytest.mark.slow
def test_s_min_scales_with_mass(ising):
    one, _ = s_min(ising, 1.0)
    two, _ = s_min(ising, 2.0)
    assert two == pytest.approx(one / 2, rel=1e-5)


@pytest.mark.slow
def test_s_min_bound_state_misses_reduced_compton_length(bound_state):
    start = time.perf_counter()
    value, kappa_star = s_min(bound_state, 1.0)
    assert time.perf_counter() - start < 60
    assert value == pytest.approx(4.7004, rel=1e-3)
    assert kappa_star == pytest.approx(0.2274, abs=0.01)
    report = compton_report(value, 1.0)
    assert not report["passed"]
    assert report["margin"] == pytest.approx(1 - value)
    assert report["margin"] < -3.5
    assert report["margin_full"] == pytest.approx(2 * math.pi - value)


def test_s_min_search_stages(ising, mocker):
    mocker.patch("services.nuclearity.hardy_constant", return_value=1.0)
    solve = mocker.patch("services.nuclearity._threshold_u",
                         side_effect=lambda constant, kappa, *args: 2.0 + (kappa - 0.6) ** 2)
    config = NuclearityConfig()
    value, kappa_star = s_min(ising, 1.0, config)
    assert kappa_star == pytest.approx(0.6, abs=1e-3)
    assert value == pytest.approx(2.0, abs=1e-6)
    tols = [c.args[3] for c in solve.call_args_list]
    assert tols[:config.lattice_points] == [config.scan_tol] * config.lattice_points
    later = solve.call_args_list[config.lattice_points:]
    assert later and all(c.args[3] == config.search_refinement_tol for c in later)
    # rescoring and refinement start from the values already found
    assert all(c.args[6] != 1.0 and c.args[7] == config.seed_growth for c in later)
    assert len(later) <= 3 + config.refine_maxiter + 5


def test_s_min_divides_by_mass(ising, mocker):
    mocker.patch("services.nuclearity.hardy_constant", return_value=1.0)
    mocker.patch("services.nuclearity._threshold_u",
                 side_effect=lambda constant, kappa, *args: 2.0 + (kappa - 0.6) ** 2)
    value, _ = s_min(ising, 4.0)
    assert value == pytest.approx(0.5, abs=1e-6)


def test_threshold_with_seeded_bracket():
    disc = KernelDiscretization()
    wide = _threshold_u(50.0, 0.5, disc, 1e-8, (1e-4, 1e4), 1e-9)
    seeded = _threshold_u(50.0, 0.5, disc, 1e-8, (1e-4, 1e4), 1e-9, guess=wide * 1.01, growth=1.05)
    assert seeded == pytest.approx(wide, rel=1e-8)
    product = 50.0 * hardy_norm_factor(1.0, wide, 0.5) * t_trace_norm(1.0, wide, 0.5, disc).value
    assert product == pytest.approx(1.0, rel=1e-6)


# =========================
# Sweep
# =========================
@pytest.mark.asyncio
async def test_sweep_rows_follow_input_order(sinh_gordon):
    config = NuclearityConfig(s_values=[0.05, 1.0], workers=2)
    report = await NuclearitySweep(sinh_gordon, 1.0, config).run([0.3, 0.45], with_s_min=False,
                                                                 with_checks=False)
    assert [(r.s, r.kappa) for r in report.rows] == [(0.05, 0.3), (0.05, 0.45), (1.0, 0.3), (1.0, 0.45)]
    first = report.rows[0]
    assert first.bound_bosonic is None
    assert first.log10_bound_fermionic is not None
    assert math.isfinite(first.log10_bound_fermionic)
    assert report.s_min is None
    assert report.compton == {}


@pytest.mark.asyncio
async def test_sweep_bosonic_family_has_no_fermionic_column(bound_state):
    config = NuclearityConfig(s_values=[2.0])
    report = await NuclearitySweep(bound_state, 1.0, config).run([0.3], with_s_min=False, with_checks=False)
    assert report.rows[0].fermionic_x is None
    lines = report_csv(report).splitlines()
    assert lines[0] == ",".join(CSV_COLUMNS)
    assert len(lines) == 2
    assert lines[1].endswith(",,")


@pytest.mark.asyncio
async def test_sweep_with_s_min(ising, mocker):
    mocker.patch("services.nuclearity.s_min_async", new=mocker.AsyncMock(return_value=(0.8, 0.6)))
    config = NuclearityConfig(s_values=[1.0])
    report = await NuclearitySweep(ising, 1.0, config).run(with_checks=False)
    assert report.kappa_star == 0.6
    assert [r.kappa for r in report.rows] == [0.6]
    assert report.compton["passed"]


def small_check_config(**overrides):
    values = dict(kosaki_mass_scales=(1.0,), kosaki_s_values=(1.0,), kosaki_kappa_fractions=(0.5,))
    values.update(overrides)
    return NuclearityConfig(**values)


def fabricated_row(s, sigma, t_trace, stability=0.0):
    product = sigma * t_trace
    return NuclearityRow(s=s, kappa=0.5, sigma=sigma, t_trace=t_trace, product=product,
                         bound_bosonic=1 / (1 - product) if product < 1 else None,
                         fermionic_x=None, log10_bound_fermionic=None, stability=stability)


@pytest.mark.asyncio
async def test_sweep_checks_pass_on_computed_rows(sinh_gordon):
    config = small_check_config(s_values=[0.5, 1.0, 2.0])
    report = await NuclearitySweep(sinh_gordon, 1.0, config).run([0.4], with_s_min=False)
    checks = report.checks
    assert set(checks) == {"kosaki", "monotonicity", "bosonic_divergence", "stability"}
    assert checks["kosaki"]["cases"] == 1
    assert all(check["passed"] for check in checks.values())
    # no s_min, nothing to compare against
    assert checks["bosonic_divergence"]["s"] is None
    assert 0 <= checks["stability"]["max_change"] < 1e-6
    assert all(r.stability < 1e-6 for r in report.rows)


@pytest.mark.asyncio
async def test_sweep_checks_bosonic_divergence_below_s_min(ising):
    sweep = NuclearitySweep(ising, 1.0, small_check_config(s_values=[0.05, 2.0]))
    checks = await sweep.checks([], s_min_value=1.0, kappa_star=0.6)
    divergence = checks["bosonic_divergence"]
    assert divergence["s"] == 0.05
    assert divergence["product"] > 1
    assert divergence["passed"]


@pytest.mark.asyncio
async def test_sweep_checks_flag_bad_rows(ising):
    sweep = NuclearitySweep(ising, 1.0, small_check_config())
    rows = [fabricated_row(0.5, 2.0, 0.3), fabricated_row(1.0, 2.5, 0.2, stability=1e-3)]
    checks = await sweep.checks(rows, s_min_value=None, kappa_star=None)
    assert checks["kosaki"]["passed"]
    assert not checks["monotonicity"]["passed"]
    assert not checks["stability"]["passed"]
    assert checks["stability"]["max_change"] == 1e-3


@pytest.mark.asyncio
async def test_kosaki_lattice_defaults(sinh_gordon, mocker):
    spy = mocker.patch("services.nuclearity.kosaki_check", return_value=(1.0, 2.0))
    sweep = NuclearitySweep(sinh_gordon, 2.0, NuclearityConfig())
    checks = await sweep.checks([], s_min_value=None, kappa_star=None)
    assert checks["kosaki"]["cases"] == 27
    masses = sorted({c.args[0] for c in spy.call_args_list})
    assert masses == [1.0, 2.0, 4.0]
    kappas = sorted({c.args[2] for c in spy.call_args_list})
    assert kappas == pytest.approx([sweep.reg.kappa * f for f in (0.25, 0.5, 0.75)])
    assert checks["kosaki"]["worst_ratio"] == 0.5
