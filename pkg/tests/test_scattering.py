import math

import numpy as np
import pytest

from core.errors import PrecedenceError, SymmetryError
from core.models import Direction, OrderedWavefunctions, RapidityGrid, SectorTensor
from services.fock import FREE, pn_project, random_symmetric
from services.scatfn import sign_class
from services.scattering import (
    check_precedence,
    completeness_rank,
    in_state,
    moller_adjoint,
    moller_apply,
    out_state,
    projection_defect,
    s_matrix_apply,
    s_matrix_bruteforce,
)


def bump(d, support, rng):
    psi = np.zeros(d, dtype=complex)
    psi[list(support)] = rng.standard_normal(len(support)) + 1j * rng.standard_normal(len(support))
    return psi


def symmetric_tensor(s2, rng, grid, n):
    return random_symmetric(rng, grid, n, exclude_coincident=sign_class(s2) == -1)


# =========================
# Collision states
# =========================
def test_precedence(rng):
    assert check_precedence([bump(6, [0, 1], rng), bump(6, [2, 3], rng), bump(6, [5], rng)])
    assert not check_precedence([bump(6, [0, 2], rng), bump(6, [1, 3], rng)])
    assert not check_precedence([bump(6, [3], rng), bump(6, [3], rng)])
    assert check_precedence([bump(6, [4], rng), np.zeros(6), bump(6, [5], rng)])


def test_ordered_wavefunctions_reject_overlap(rng, grid6):
    with pytest.raises(PrecedenceError):
        OrderedWavefunctions(grid6, [bump(6, [2, 3], rng), bump(6, [1], rng)])


def test_free_out_and_in_states_agree(free, rng, grid6):
    waves = [bump(6, [0, 1], rng), bump(6, [3, 4], rng)]
    np.testing.assert_allclose(out_state(free, grid6, waves).amplitudes,
                               in_state(free, grid6, waves).amplitudes, atol=1e-14)


def test_two_particle_out_state(sinh_gordon, rng, grid6):
    psi1, psi2 = bump(6, [0, 1], rng), bump(6, [4, 5], rng)
    state = out_state(sinh_gordon, grid6, [psi1, psi2]).amplitudes
    nodes = grid6.nodes
    for a in (0, 1):
        for b in (4, 5):
            assert state[a, b] == pytest.approx(psi1[a] * psi2[b] / math.sqrt(2), abs=1e-14)
            exchanged = complex(sinh_gordon.evaluate(nodes[a] - nodes[b])) * psi1[a] * psi2[b] / math.sqrt(2)
            assert state[b, a] == pytest.approx(exchanged, abs=1e-14)


def test_collision_state_norms(interacting, rng, grid6):
    waves = [bump(6, [0, 1], rng), bump(6, [2, 3], rng), bump(6, [4, 5], rng)]
    product = math.prod(np.linalg.norm(psi) for psi in waves)
    for state in (out_state(interacting, grid6, waves), in_state(interacting, grid6, waves)):
        assert state.norm() == pytest.approx(product, rel=1e-12)
        assert projection_defect(interacting, state) < 1e-12


# =========================
# Moller operators
# =========================
def test_moller_operators_are_trivial_for_free(free, rng, grid6):
    phi = random_symmetric(rng, grid6, 3)
    for direction in Direction:
        np.testing.assert_allclose(moller_apply(free, direction, phi).amplitudes, phi.amplitudes, atol=1e-14)


def test_moller_operators_are_isometric(interacting, rng, grid6):
    for n in (2, 3):
        phi = symmetric_tensor(interacting, rng, grid6, n)
        for direction in Direction:
            mapped = moller_apply(interacting, direction, phi)
            assert mapped.norm() == pytest.approx(phi.norm(), rel=1e-12)
            assert projection_defect(interacting, mapped) < 1e-11
            back = moller_adjoint(interacting, direction, mapped)
            np.testing.assert_allclose(back.amplitudes, phi.amplitudes, atol=1e-12)


def test_moller_requires_symmetric_input(bound_state, rng, grid4):
    t = SectorTensor(2, grid4, rng.standard_normal((4, 4)))
    with pytest.raises(SymmetryError):
        moller_apply(bound_state, Direction.OUT, t)
    with pytest.raises(SymmetryError):
        s_matrix_apply(bound_state, t)


def test_moller_image_of_collision_data(sinh_gordon, rng, grid6):
    waves = [bump(6, [0, 1], rng), bump(6, [3, 4], rng)]
    plain = pn_project(FREE, SectorTensor(2, grid6, np.multiply.outer(*waves)))
    phi = plain.with_amplitudes(math.sqrt(2) * plain.amplitudes)
    np.testing.assert_allclose(moller_apply(sinh_gordon, Direction.OUT, phi).amplitudes,
                               out_state(sinh_gordon, grid6, waves).amplitudes, atol=1e-13)
    np.testing.assert_allclose(moller_apply(sinh_gordon, Direction.IN, phi).amplitudes,
                               in_state(sinh_gordon, grid6, waves).amplitudes, atol=1e-13)


# =========================
# S-matrix
# =========================
def test_s_matrix_two_particles(sinh_gordon):
    grid = RapidityGrid([-1.0, 0.0, 1.0, 2.0])
    amplitudes = np.zeros((4, 4))
    amplitudes[0, 1] = amplitudes[1, 0] = 1.0
    phi = SectorTensor(2, grid, amplitudes)
    result = s_matrix_apply(sinh_gordon, phi).amplitudes
    expected = complex(sinh_gordon.evaluate(1.0))
    assert result[0, 1] == pytest.approx(expected, abs=1e-14)
    assert result[1, 0] == pytest.approx(expected, abs=1e-14)
    assert np.count_nonzero(result) == 2


def test_s_matrix_low_sectors_are_identity(bound_state, rng, grid4):
    for n in (0, 1):
        phi = random_symmetric(rng, grid4, n)
        np.testing.assert_array_equal(s_matrix_apply(bound_state, phi).amplitudes, phi.amplitudes)


def test_s_matrix_constant_fermi_family(ising, rng, grid6):
    phi = random_symmetric(rng, grid6, 3, exclude_coincident=True)
    np.testing.assert_allclose(s_matrix_apply(ising, phi).amplitudes, -phi.amplitudes, atol=1e-14)


@pytest.mark.parametrize("n", [2, 3])
def test_s_matrix_matches_moller_product(interacting, rng, grid6, n):
    for _ in range(20):
        phi = symmetric_tensor(interacting, rng, grid6, n)
        brute = s_matrix_bruteforce(interacting, phi).amplitudes
        closed = s_matrix_apply(interacting, phi)
        assert np.max(np.abs(brute - closed.amplitudes)) < 1e-10
        assert closed.norm() == pytest.approx(phi.norm(), rel=1e-12)


# =========================
# Completeness
# =========================
def test_completeness_examples(free, ising):
    grid = RapidityGrid.uniform(3, -1.0, 1.0)
    assert completeness_rank(free, 2, grid) == (6, 6)
    assert completeness_rank(ising, 2, grid) == (3, 3)
    assert completeness_rank(ising, 4, grid) == (0, 0)


@pytest.mark.parametrize("n", [1, 2, 3])
def test_out_states_span_the_sector(family, grid4, n):
    rank, dim = completeness_rank(family, n, grid4)
    expected = math.comb(4, n) if sign_class(family) == -1 else math.comb(4 + n - 1, n)
    assert rank == dim == expected
