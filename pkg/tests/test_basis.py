import numpy as np
import pytest

from hdgbox.basis import (
    Basis1D,
    build_basis,
    generalized_eigendecomposition,
    gll_nodes_weights,
)


def test_gll_p1_endpoints_only():
    nodes, weights = gll_nodes_weights(1)
    assert np.array_equal(nodes, [-1.0, 1.0])
    assert np.array_equal(weights, [1.0, 1.0])


def test_gll_p2_from_monomial_exactness():
    # expected values frozen from exactness on x^0..x^3:
    # nodes (-1, 0, 1) by symmetry; w0+w1+w2 = 2, 2*w0 = 2/3 from x^2
    nodes, weights = gll_nodes_weights(2)
    assert np.allclose(nodes, [-1.0, 0.0, 1.0], atol=1e-15)
    assert np.allclose(weights, [1.0 / 3.0, 4.0 / 3.0, 1.0 / 3.0], atol=1e-15)
    for m in range(4):
        exact = 2.0 / (m + 1) if m % 2 == 0 else 0.0
        assert abs(weights @ nodes**m - exact) < 1e-14


@pytest.mark.parametrize("p", [1, 2, 3, 5, 8, 13, 21])
def test_gll_weights_sum_and_endpoints(p):
    nodes, weights = gll_nodes_weights(p)
    assert abs(weights.sum() - 2.0) < 1e-13
    assert nodes[0] == -1.0 and nodes[-1] == 1.0
    assert np.all(np.diff(nodes) > 0)


@pytest.mark.parametrize("p", [2, 4, 7, 12])
def test_gll_quadrature_exact_to_2p_minus_1(p):
    nodes, weights = gll_nodes_weights(p)
    for m in range(2 * p):
        exact = 2.0 / (m + 1) if m % 2 == 0 else 0.0
        assert abs(weights @ nodes**m - exact) < 1e-12


def test_gll_rejects_p0():
    with pytest.raises(ValueError):
        gll_nodes_weights(0)


def test_build_basis_p1_trace_couplings():
    b = build_basis(1, 1.0)
    assert np.array_equal(b.G, np.eye(2))
    assert np.array_equal(b.B, [[-1.0, 0.0], [0.0, -1.0]])
    assert np.array_equal(b.C, [[-1.0, 0.0], [0.0, 1.0]])


def test_build_basis_p2_lumped_mass():
    b = build_basis(2, 1.0)
    assert np.allclose(np.diag(b.M), [1.0 / 3.0, 4.0 / 3.0, 1.0 / 3.0], atol=1e-15)
    assert np.allclose(b.M, np.diag(np.diag(b.M)))


@pytest.mark.parametrize("p,tau_hat", [(1, 1.0), (3, 25.0), (6, 1.0), (10, 625.0)])
def test_eigen_identities(p, tau_hat):
    b = build_basis(p, tau_hat)
    n = p + 1
    assert np.max(np.abs(b.S.T @ b.M @ b.S - np.eye(n))) <= 1e-12
    rel = np.abs(b.S.T @ b.L @ b.S - np.diag(b.Lambda)) / max(b.Lambda.max(), 1.0)
    assert np.max(rel) <= 1e-10
    assert np.min(b.Lambda) >= -1e-12
    assert np.all(np.diff(b.Lambda) >= 0)


def test_generalized_eigen_diagonal_case():
    # eigenvectors of (I, diag(a, b)) are unit vectors, eigenvalues sorted
    S, lam = generalized_eigendecomposition(np.eye(2), np.diag([5.0, 2.0]))
    assert np.allclose(lam, [2.0, 5.0])
    assert np.allclose(np.abs(S), [[0.0, 1.0], [1.0, 0.0]], atol=1e-14)
    # deterministic sign fix: largest entry of each column is positive
    assert S[1, 0] > 0 and S[0, 1] > 0


def test_eigen_reconstruction_p2():
    b = build_basis(2, 1.0)
    L_rec = b.M @ b.S @ np.diag(b.Lambda) @ b.S.T @ b.M
    assert np.max(np.abs(L_rec - b.L)) <= 1e-12


def test_generalized_eigen_rejects_bad_inputs():
    with pytest.raises(ValueError):
        generalized_eigendecomposition(np.diag([1.0, -1.0]), np.eye(2))
    L = np.array([[1.0, 2.0], [0.0, 1.0]])  # grossly asymmetric
    with pytest.raises(ValueError):
        generalized_eigendecomposition(np.eye(2), L)


def test_basis_rejects_bad_arguments():
    with pytest.raises(ValueError):
        Basis1D(0, 1.0)
    with pytest.raises(ValueError):
        Basis1D(3, 0.0)
    with pytest.raises(ValueError):
        Basis1D(3, -2.0)


@pytest.mark.parametrize("p", [1, 2, 4, 9])
def test_D_annihilates_constants(p):
    b = build_basis(p, 1.0)
    assert np.max(np.abs(b.D @ np.ones(p + 1))) <= 1e-13


def test_B_and_C_sparsity():
    b = build_basis(5, 3.0)
    assert np.all(b.B[1:-1] == 0.0)
    assert b.B[0, 0] == -3.0 and b.B[-1, 1] == -3.0
    nz = np.nonzero(b.C)
    assert np.array_equal(nz[0], [0, 5]) and np.array_equal(nz[1], [0, 1])
    assert b.C[0, 0] == -1.0 and b.C[5, 1] == 1.0


def test_BS_consistency_from_factors():
    b = build_basis(4, 25.0)
    Minv = np.diag(1.0 / b.weights)
    expected = b.S.T @ b.B - (b.S.T @ b.D) @ (Minv @ b.C)
    assert np.max(np.abs(b.B_S - expected)) <= 1e-13


def test_GCC_symmetric_exact():
    b = build_basis(6, 25.0)
    assert np.array_equal(b.GCC, b.GCC.T)


def test_dump_mentions_all_matrices():
    text = build_basis(2, 1.0).dump()
    for name in ("M =", "Lambda =", "B_S ="):
        assert name in text
