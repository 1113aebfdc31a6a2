import math

import numpy as np
import pytest

from core.errors import MalformedContractionError, TruncationError
from core.models import Contraction, OperatorRep, RapidityGrid, SectorTensor
from services.fock import FockSpace, pn_project
from services.formfactor import (
    acon,
    acon_direct,
    contracted_me,
    contraction_factor,
    count_contractions,
    enumerate_contractions,
    gaussian_master_bound_report,
    lemma_tech_residual,
    lr_bound_ratio,
    master_bound_constant,
    srho_bound_check,
)
from services.scatfn import regularity


@pytest.fixture
def grid3():
    return RapidityGrid.uniform(3, -1.0, 1.0)


# =========================
# Contractions
# =========================
@pytest.mark.parametrize("n", [1, 2, 3, 5])
def test_no_split_has_only_the_empty_contraction(n):
    contractions = enumerate_contractions(n, 0)
    assert len(contractions) == 1
    assert contractions[0].pairs == ()


def test_known_counts():
    assert len(enumerate_contractions(4, 2)) == 7
    assert len(enumerate_contractions(4, 2, exclude_kplus1=True)) == 3


@pytest.mark.parametrize("n", range(1, 7))
def test_enumeration_matches_closed_form(n):
    for k in range(n + 1):
        assert len(enumerate_contractions(n, k)) == count_contractions(n, k)
        if k < n:
            assert len(enumerate_contractions(n, k, True)) == count_contractions(n, k, True)


def test_enumeration_is_sorted_and_valid():
    contractions = enumerate_contractions(5, 2)
    assert [c.pairs for c in contractions] == sorted(c.pairs for c in contractions)
    for c in contractions:
        assert all(2 < l <= 5 and 1 <= r <= 2 for l, r in c.pairs)


@pytest.mark.parametrize("pairs, n, k", [
    (((2, 1),), 3, 2),
    (((3, 3),), 4, 2),
    (((3, 1), (4, 1)), 4, 2),
    (((3, 1), (3, 2)), 4, 2),
    ((), 3, 4),
])
def test_malformed_contractions(pairs, n, k):
    with pytest.raises(MalformedContractionError):
        Contraction(pairs, n, k)


def test_contraction_factor_examples(free, sinh_gordon):
    grid = RapidityGrid.uniform(4, -1.5, 1.5)
    adjacent = Contraction(((2, 1),), 2, 1)
    assert contraction_factor(sinh_gordon, adjacent, (3, 3), grid) == (True, -1, 1)
    assert contraction_factor(sinh_gordon, adjacent, (0, 3), grid)[0] is False

    wide = Contraction(((3, 1),), 3, 1)
    support, sign, value = contraction_factor(sinh_gordon, wide, (0, 2, 0), grid)
    assert support and sign == -1
    expected = complex(sinh_gordon.evaluate(grid.nodes[0] - grid.nodes[2]))
    assert value == pytest.approx(expected, abs=1e-14)
    assert contraction_factor(free, wide, (0, 2, 0), grid)[2] == 1


def test_contraction_factor_needs_full_index_tuple(free, grid3):
    with pytest.raises(MalformedContractionError):
        contraction_factor(free, Contraction(((2, 1),), 2, 1), (0,), grid3)


# =========================
# Matrix elements
# =========================
def test_identity_matrix_element(bound_state, grid3):
    one = OperatorRep.identity(grid3, 2)
    element = contracted_me(bound_state, one, Contraction((), 2, 1), 2, 1)
    np.testing.assert_allclose(element, np.eye(3), atol=1e-14)


def test_matrix_element_checks_membership(free, grid3):
    one = OperatorRep.identity(grid3, 3)
    with pytest.raises(MalformedContractionError):
        contracted_me(free, one, Contraction((), 2, 1), 3, 1)


def test_matrix_element_needs_enough_sectors(free, grid3):
    one = OperatorRep.identity(grid3, 1)
    with pytest.raises(TruncationError):
        acon(free, one, 3, 1)


def test_no_split_is_projected_image_of_vacuum(interacting, rng, grid3):
    n = 3
    a = OperatorRep.random(rng, grid3, n)
    space = FockSpace(interacting, grid3, n)
    image = SectorTensor(n, grid3, a.matrix[space.block(n), space.block(0)][:, 0])
    expected = math.sqrt(math.factorial(n)) * pn_project(interacting, image).amplitudes
    np.testing.assert_allclose(acon(interacting, a, n, 0), expected, atol=1e-12)


@pytest.mark.parametrize("n, k", [(1, 0), (1, 1), (2, 1), (3, 1), (3, 2), (4, 2)])
def test_identity_is_fully_disconnected(family, n, k):
    grid = RapidityGrid.uniform(3, -1.0, 1.0)
    one = OperatorRep.identity(grid, n)
    assert np.max(np.abs(acon(family, one, n, k))) < 1e-12


@pytest.mark.parametrize("k", [0, 1, 2, 3])
def test_acon_agrees_with_explicit_creation(interacting, rng, grid3, k):
    a = OperatorRep.random(rng, grid3, 3)
    np.testing.assert_allclose(acon(interacting, a, 3, k), acon_direct(interacting, a, 3, k), atol=1e-10)


# =========================
# Recursion identities and bounds
# =========================
@pytest.mark.parametrize("n", [1, 2, 3])
def test_recursion_residuals(family, rng, grid4, n):
    for _ in range(5):
        a = OperatorRep.random(rng, grid4, n)
        for k in range(n):
            res1, res2 = lemma_tech_residual(family, a, n, k)
            assert res1 < 1e-9
            assert res2 < 1e-9


@pytest.mark.slow
@pytest.mark.parametrize("n", [1, 2, 3, 4])
def test_recursion_residuals_twenty_operators(family, rng, grid4, n):
    for _ in range(20):
        a = OperatorRep.random(rng, grid4, n)
        for k in range(n):
            assert max(lemma_tech_residual(family, a, n, k)) < 1e-9


@pytest.mark.slow
def test_recursion_residuals_four_particles(sinh_gordon, rng):
    grid = RapidityGrid.uniform(3, -1.0, 1.0)
    space = FockSpace(sinh_gordon, grid, 4)
    psi = rng.standard_normal(3) + 1j * rng.standard_normal(3)
    chi = rng.standard_normal(3) + 1j * rng.standard_normal(3)
    a = OperatorRep(space.creation_matrix(psi) @ space.annihilation_matrix(chi), grid, 4)
    for k in range(4):
        assert max(lemma_tech_residual(sinh_gordon, a, 4, k)) < 1e-9


def test_recursion_rejects_top_split(free, rng, grid3):
    with pytest.raises(MalformedContractionError):
        lemma_tech_residual(free, OperatorRep.random(rng, grid3, 2), 2, 2)


def test_lr_bound(interacting, rng, grid3):
    a = OperatorRep.random(rng, grid3, 3)
    for k in range(4):
        for c in enumerate_contractions(3, k):
            assert lr_bound_ratio(interacting, a, c, rng, trials=5) <= 1 + 1e-9


@pytest.mark.parametrize("n", [2, 3])
def test_srho_tube_bound(interacting, rng, n):
    report = srho_bound_check(interacting, n, rng, samples=300)
    assert report["passed"]
    assert report["max_modulus"] <= report["bound"] + 1e-8


def test_master_constant_for_entire_family(free):
    reg = regularity(free)
    kappa = 0.5
    expected = 8 / math.pi / math.sqrt(math.pi / 2 - kappa)
    assert master_bound_constant(free, kappa, reg) == pytest.approx(expected)


def test_gaussian_master_report_fields(sinh_gordon, rng):
    report = gaussian_master_bound_report(sinh_gordon, 2, 0.4, rng, samples=50, trials=2)
    assert report["sampled"] == "unit_gaussian_products"
    assert "sampled_max" not in report
    assert report["bound"] == pytest.approx(report["constant"] ** 2)
    assert report["ratio"] == pytest.approx(report["gaussian_max"] / report["bound"])
    assert report["within_bound"] == (report["gaussian_max"] <= report["bound"])
