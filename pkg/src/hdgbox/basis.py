"""One-dimensional reference-element quantities for GLL Lagrange bases.

Everything here lives on the standard interval [-1, 1].  The volume basis is
the Lagrange basis on Gauss-Lobatto-Legendre (GLL) nodes with the lumped
(diagonal) mass matrix, and the trace basis on the two endpoints consists of
indicator functions, so all endpoint couplings collapse to a handful of
nonzeros.  Penalty terms carry only the reference penalty ``tau_hat``;
physical scalings (2/h per direction) enter later through metric
coefficients, which keeps a single set of matrices shared between elements
of any size.
"""

import numpy as np

__all__ = [
    "gll_nodes_weights",
    "lagrange_derivative_matrix",
    "generalized_eigendecomposition",
    "Basis1D",
    "build_basis",
]


def _legendre_pair(p, x):
    """Evaluate P_p and P'_p at `x` via the three-term recurrence (vectorized)."""
    x = np.asarray(x, dtype=float)
    P_prev = np.ones_like(x)
    dP_prev = np.zeros_like(x)
    if p == 0:
        return P_prev, dP_prev
    P = x.copy()
    dP = np.ones_like(x)
    for k in range(2, p + 1):
        P_next = ((2 * k - 1) * x * P - (k - 1) * P_prev) / k
        dP_next = dP_prev + (2 * k - 1) * P  # P'_k - P'_{k-2} = (2k-1) P_{k-1}
        P_prev, dP_prev = P, dP
        P, dP = P_next, dP_next
    return P, dP


def gll_nodes_weights(p):
    """Gauss-Lobatto-Legendre nodes and weights on [-1, 1].

    Nodes are the p+1 roots of (1 - x^2) P'_p(x), weights are
    w_i = 2 / (p (p+1) P_p(x_i)^2).  Interior nodes come from Newton
    iteration started at the Chebyshev extrema; the Legendre ODE collapses
    the Newton update to dx = (1 - x^2) P'_p / (p (p+1) P_p).

    The quadrature integrates polynomials up to degree 2p-1 exactly.
    Endpoints are exactly +-1 and the weights sum to 2.
    """
    if p < 1:
        raise ValueError("polynomial degree must be at least 1")
    if p == 1:
        return np.array([-1.0, 1.0]), np.array([1.0, 1.0])

    x = -np.cos(np.pi * np.arange(p + 1) / p)
    xi = x[1:-1]
    for _ in range(100):
        P, dP = _legendre_pair(p, xi)
        dx = (1.0 - xi**2) * dP / (p * (p + 1) * P)
        xi += dx
        if np.max(np.abs(dx)) < 1e-15:
            break
    x[1:-1] = xi
    x[0], x[-1] = -1.0, 1.0
    x = 0.5 * (x - x[::-1])  # enforce antisymmetry exactly

    P, _ = _legendre_pair(p, x)
    w = 2.0 / (p * (p + 1) * P**2)
    w = 0.5 * (w + w[::-1])
    return x, w


def lagrange_derivative_matrix(nodes):
    """Nodal differentiation matrix Dhat[i, j] = l_j'(x_i) for Lagrange l_j.

    Uses barycentric weights with the negative-sum trick for the diagonal,
    so the matrix annihilates constants exactly (zero row sums).
    """
    x = np.asarray(nodes, dtype=float)
    m = x.size
    diff = x[:, None] - x[None, :]
    np.fill_diagonal(diff, 1.0)
    v = 1.0 / np.prod(diff, axis=1)  # barycentric weights
    v /= np.max(np.abs(v))
    D = (v[None, :] / v[:, None]) / diff
    np.fill_diagonal(D, 0.0)
    np.fill_diagonal(D, -np.sum(D, axis=1))
    return D


def generalized_eigendecomposition(M, L):
    """Solve L S = M S diag(Lambda) with S^T M S = I for diagonal SPD M.

    Reduces to a standard symmetric problem via M^{-1/2} L M^{-1/2}, so a
    dense symmetric eigensolver does the work; eigenvalues come back in
    ascending order.  Column signs are fixed so the largest-magnitude entry
    of each eigenvector is positive, which makes the factorisation
    deterministic across platforms.

    Raises ValueError for a non-positive mass diagonal or for L with
    relative asymmetry beyond 1e-10.
    """
    M = np.asarray(M, dtype=float)
    L = np.asarray(L, dtype=float)
    d = np.diag(M).copy()
    if np.any(d <= 0.0):
        raise ValueError("mass matrix diagonal must be strictly positive")
    off = M - np.diag(d)
    if np.max(np.abs(off)) > 1e-13 * max(np.max(d), 1.0):
        raise ValueError("mass matrix must be diagonal")
    scale = max(np.max(np.abs(L)), 1.0)
    if np.max(np.abs(L - L.T)) > 1e-10 * scale:
        raise ValueError("operator matrix is not symmetric")

    rsq = 1.0 / np.sqrt(d)
    A = rsq[:, None] * (0.5 * (L + L.T)) * rsq[None, :]
    lam, V = np.linalg.eigh(A)  # ascending; failure raises LinAlgError
    S = rsq[:, None] * V
    flip = S[np.argmax(np.abs(S), axis=0), np.arange(S.shape[1])] < 0.0
    S[:, flip] *= -1.0
    return S, lam


class Basis1D:
    """All 1D standard-element matrices for one degree p and penalty tau_hat.

    Attributes
    ----------
    nodes, weights : GLL points and quadrature weights, length p+1.
    M : diagonal (lumped) mass matrix diag(weights).
    D : integrated differentiation matrix, D[i, j] = int phi_i phi_j' dxi.
        With GLL lumping this equals M @ Dhat exactly (integrand degree
        2p-1).
    E : endpoint penalty on the volume basis, tau_hat * (e0 e0^T + ep ep^T).
    G : 2x2 endpoint penalty on the trace basis, tau_hat * I.
    B : volume-to-trace penalty coupling, B[0,0] = B[p,1] = -tau_hat.
    C : signed endpoint evaluation (outward normal), C[0,0] = -1, C[p,1] = +1.
    L : E + D M^-1 D^T, the symmetric positive definite core operator.
    S, Lambda : generalized eigenpairs, S^T M S = I and S^T L S = diag(Lambda).
    B_S : fused trace-to-eigenspace map S^T B - S^T D M^-1 C, shape (p+1, 2).
    GCC : opposing-face block G + C^T M^-1 C (2x2, diagonal for this basis).
    Dhat : nodal differentiation matrix (strong derivative at the nodes).

    Instances are immutable by convention and safe to share across threads.
    """

    def __init__(self, p, tau_hat):
        if p < 1:
            raise ValueError("polynomial degree must be at least 1")
        if tau_hat <= 0.0:
            raise ValueError("reference penalty tau_hat must be positive")
        self.p = int(p)
        self.tau_hat = float(tau_hat)

        nodes, weights = gll_nodes_weights(p)
        self.nodes = nodes
        self.weights = weights
        self.inv_weights = 1.0 / weights

        self.Dhat = lagrange_derivative_matrix(nodes)
        self.M = np.diag(weights)
        self.D = weights[:, None] * self.Dhat

        n = p + 1
        self.E = np.zeros((n, n))
        self.E[0, 0] = tau_hat
        self.E[p, p] = tau_hat
        self.G = tau_hat * np.eye(2)
        self.B = np.zeros((n, 2))
        self.B[0, 0] = -tau_hat
        self.B[p, 1] = -tau_hat
        self.C = np.zeros((n, 2))
        self.C[0, 0] = -1.0
        self.C[p, 1] = 1.0

        Minv_D_T = self.inv_weights[:, None] * self.D.T
        self.L = self.E + self.D @ Minv_D_T
        self.S, self.Lambda = generalized_eigendecomposition(self.M, self.L)
        self.B_S = self.S.T @ self.B - self.S.T @ self.D @ (self.inv_weights[:, None] * self.C)
        self.GCC = self.G + self.C.T @ (self.inv_weights[:, None] * self.C)

    @property
    def n(self):
        """Number of nodes per direction, p + 1."""
        return self.p + 1

    def dump(self):
        """Plain-text tables of the matrices, for debugging."""
        parts = []
        for name in ("nodes", "weights", "M", "D", "E", "G", "B", "C", "L", "S", "Lambda", "B_S", "GCC"):
            parts.append(f"{name} =\n{np.array2string(getattr(self, name), precision=6)}")
        return "\n".join(parts)


def build_basis(p, tau_hat):
    """Construct the full set of 1D standard-element quantities."""
    return Basis1D(p, tau_hat)
