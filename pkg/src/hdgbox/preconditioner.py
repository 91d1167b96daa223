"""Face-local preconditioners built from the self-coupling of the operator.

In the face eigenspace the one-face-to-itself part of the element operator is
diagonal: for a direction-d face on side l of an element, the entry at the
tangential eigenindex pair (b, c) is

    y(l; b, c) = alpha_d * GCC[l, l]
               - alpha_d^2 * sum_a B_S[a, l]^2 / (lam*alpha0 + sum alpha*Lambda)

with the eigenvalue sum matching the placement of (a, b, c) on the element
axes.  Interior faces sum the contributions of both adjoining elements,
boundary faces get the single one.  The block preconditioner inverts these
entries and wraps the tangential eigenspace transforms around the division;
the plain diagonal preconditioner instead divides by the true diagonal of
the operator in nodal coordinates.

Builds and applications are face-parallel with no shared writes; instances
are immutable after construction.
"""

import numpy as np

from .mesh import DIRICHLET, FluxField
from .operator import _apply_axis

__all__ = [
    "BlockPreconditioner",
    "DiagonalPreconditioner",
    "build_block_preconditioner",
    "build_diagonal_preconditioner",
    "transformed_preconditioner",
    "apply_block_preconditioner",
]


def _eigen_face_contrib(ctx):
    """Per (direction, side) eigenspace self-coupling of one element.

    Returns contrib[d][l] as an (n, n) array over the tangential
    eigenindices, identical for every element of a uniform mesh.
    """
    b = ctx.basis
    al = ctx.geom.alphas
    bs2 = b.B_S**2  # (n, 2)
    dz = ctx.dz_inv
    sums = [
        np.einsum("al,abc->lbc", bs2, dz),
        np.einsum("al,bac->lbc", bs2, dz),
        np.einsum("al,bca->lbc", bs2, dz),
    ]
    gcc = np.diag(b.GCC)
    out = []
    for d in range(3):
        out.append(al[d] * gcc[:, None, None] - al[d] ** 2 * sums[d])
    return out


def _accumulate_faces(ctx, contrib):
    """Sum the per-side contributions onto the faces of each direction."""
    mesh = ctx.mesh
    n = ctx.basis.n
    out = []
    for d in range(3):
        acc = np.zeros((mesh.n_faces[d], n, n))
        acc[mesh.face_lo[d]] += contrib[d][0][None]
        acc[mesh.face_hi[d]] += contrib[d][1][None]
        out.append(acc)
    return out


class BlockPreconditioner:
    """Exact inverse of the face self-coupling, diagonal in eigenspace.

    Stores the entrywise inverse y^-1 per face plus the 1D transform pair
    (S^T for residuals in, S for corrections out).  Dirichlet faces hold a
    placeholder of one and are never consulted.
    """

    def __init__(self, ctx):
        self.mesh = ctx.mesh
        self.p = ctx.basis.p
        self.S = ctx.basis.S
        self.St = ctx.basis.S.T
        y = _accumulate_faces(ctx, _eigen_face_contrib(ctx))
        self.y_inv = []
        for d in range(3):
            yd = y[d]
            unknown = ctx.mesh.face_is_unknown[d]
            if np.any(yd[unknown] <= 0.0):
                raise ValueError("non-positive face block entry; invalid tau_hat/lambda combination")
            yd = yd.copy()
            yd[~unknown] = 1.0
            self.y_inv.append(1.0 / yd)
        self._unknown_idx = [np.flatnonzero(ctx.mesh.face_is_unknown[d]) for d in range(3)]

    def apply(self, residual, counter=None):
        """z = P r on a FluxField; Dirichlet blocks pass through as zeros."""
        out = FluxField(residual.mesh, residual.p)
        for d in range(3):
            r = _apply_axis(self.St, residual.data[d], 1, counter)
            r = _apply_axis(self.St, r, 2, counter)
            if counter is not None:
                counter.scale(r.size)
            r *= self.y_inv[d]
            r = _apply_axis(self.S, r, 1, counter)
            out.data[d] = _apply_axis(self.S, r, 2, counter)
        out.zero_dirichlet()
        return out

    def apply_packed(self, vec, counter=None):
        """Same as apply, on the packed unknown vector."""
        n = self.p + 1
        out = np.empty_like(vec)
        pos = 0
        for d in range(3):
            idx = self._unknown_idx[d]
            cnt = idx.size * n * n
            r = vec[pos : pos + cnt].reshape(idx.size, n, n)
            r = _apply_axis(self.St, r, 1, counter)
            r = _apply_axis(self.St, r, 2, counter)
            if counter is not None:
                counter.scale(r.size)
            r *= self.y_inv[d][idx]
            r = _apply_axis(self.S, r, 1, counter)
            r = _apply_axis(self.S, r, 2, counter)
            out[pos : pos + cnt] = r.ravel()
            pos += cnt
        return out


class DiagonalPreconditioner:
    """Entrywise division by a strictly positive per-unknown diagonal.

    Used both for the true nodal diagonal of the operator and, in the
    transformed system, for the eigenspace face diagonals (where the block
    preconditioner degenerates to exactly this).
    """

    def __init__(self, mesh, p, diag_faces):
        self.mesh = mesh
        self.p = p
        self.diag = []
        for d in range(3):
            dd = np.asarray(diag_faces[d], dtype=float)
            unknown = mesh.face_is_unknown[d]
            if np.any(dd[unknown] <= 0.0):
                raise ValueError("non-positive diagonal entry; invalid tau_hat/lambda combination")
            dd = dd.copy()
            dd[~unknown] = 1.0
            self.diag.append(dd)
        self._packed = np.concatenate([self.diag[d][mesh.face_is_unknown[d]].ravel() for d in range(3)])

    def apply(self, residual, counter=None):
        out = FluxField(residual.mesh, residual.p)
        for d in range(3):
            if counter is not None:
                counter.scale(residual.data[d].size)
            out.data[d] = residual.data[d] / self.diag[d]
        out.zero_dirichlet()
        return out

    def apply_packed(self, vec, counter=None):
        if counter is not None:
            counter.scale(vec.size)
        return vec / self._packed


def build_block_preconditioner(ctx):
    """Face-wise exact inverse of the operator self-coupling (eigenspace)."""
    return BlockPreconditioner(ctx)


def apply_block_preconditioner(residual, prec, counter=None):
    """z = P r; transform each face in, divide, transform back out."""
    return prec.apply(residual, counter)


def build_diagonal_preconditioner(ctx):
    """True diagonal of the global operator over the unknowns.

    The nodal diagonal of one face block follows from conjugating the
    eigenspace diagonal y back with (M S (x) M S): at nodal point (j, k),
    diag = (w_j w_k)^2 * (W y W^T)[j, k] with W = S*S entrywise.  Built in
    O(p^3) per face, applied in O(p^2).
    """
    contrib = _eigen_face_contrib(ctx)
    w2 = ctx.basis.weights**2
    W = ctx.basis.S**2
    scale = np.multiply.outer(w2, w2)
    nodal = [[scale * (W @ contrib[d][l] @ W.T) for l in range(2)] for d in range(3)]
    diag = _accumulate_faces(ctx, [np.stack(nd) for nd in nodal])
    return DiagonalPreconditioner(ctx.mesh, ctx.basis.p, diag)


def transformed_preconditioner(ctx):
    """Eigenspace face diagonals for the transformed system.

    In the transformed basis the block preconditioner's face transforms
    vanish, leaving plain division by the face self-coupling diagonal.
    Iteration-for-iteration this matches the block preconditioner on the
    untransformed system.
    """
    y = _accumulate_faces(ctx, _eigen_face_contrib(ctx))
    return DiagonalPreconditioner(ctx.mesh, ctx.basis.p, y)
