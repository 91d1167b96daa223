"""Matrix-free residual evaluation for the hybridized trace system.

The element operator acting on the six face blocks of one element is

    K_e = G_e + sum_d C_d^T M_e^-1 C_d  -  B_Se^T D_Z^-1 B_Se

where the first two terms couple opposing faces and the last one routes the
face data through the element eigenspace: expand into the element with the
fused face-to-eigenspace map, scale by the precomputed inverse eigenvalues,
and reduce back to the faces.  Every matrix involved is a tensor product of
small 1D factors, so the work per element is O((p+1)^3).

Two variants are provided: the plain kernel, which wraps the tangential
directions of every face in S^T M / M S transforms, and the transformed-basis
kernel, where those factors have been absorbed into the unknowns and become
identities.  Both operate on all faces, including Dirichlet ones; restricting
to unknowns is the solver's job.

Applications are pure functions of an immutable context; scratch arrays are
local, so element batches may be evaluated concurrently as long as the
scatter stage follows the per-direction accumulation contract of the mesh
module.
"""

import warnings

import numpy as np

from .mesh import FluxField, gather_batched, scatter_add_batched

__all__ = [
    "FlopCounter",
    "EigenScale3D",
    "OperatorContext",
    "Context1D",
    "apply_tp3",
    "hdg_op_1d",
    "hdg_op_3d",
    "hdg_op_3d_transformed",
    "transform_faces",
    "assemble_dense_element",
    "assemble_dense_global",
    "kron3",
]


class FlopCounter:
    """Deterministic multiply/add counter for the tensor kernels.

    Counts 2*m*k per output point for an (m, k) contraction (one multiply
    and one accumulate each) and 1 per point for diagonal scalings and
    vector adds.  No timing involved, so counts are exactly reproducible.
    """

    def __init__(self):
        self.ops = 0

    def reset(self):
        self.ops = 0

    def contract(self, m, k, pts):
        self.ops += 2 * m * k * pts

    def scale(self, pts):
        self.ops += pts

    def add(self, pts):
        self.ops += pts


def _apply_axis(A, x, axis, counter=None):
    """Contract matrix A (m, k) with tensor x along `axis` (length k)."""
    if counter is not None:
        counter.contract(A.shape[0], A.shape[1], x.size // x.shape[axis])
    xm = np.moveaxis(x, axis, -1)
    return np.moveaxis(xm @ A.T, -1, axis)


def apply_tp3(A, B, C, x, counter=None):
    """Apply the Kronecker operator (C (x) B (x) A) to a 3D block.

    `x` is indexed [i1, i2, i3]; A acts on the first (fastest) index, B on
    the second and C on the third, matching the flattening where i1 runs
    fastest.  Rectangular factors are fine.  The product is evaluated as
    three one-dimensional contractions and never materialises the Kronecker
    matrix.
    """
    x = np.asarray(x)
    if x.ndim != 3:
        raise ValueError("expected a rank-3 block")
    for d, F in enumerate((A, B, C)):
        if F.shape[1] != x.shape[d]:
            raise ValueError(f"factor {d} has {F.shape[1]} columns, block axis has {x.shape[d]}")
    y = _apply_axis(np.asarray(A), x, 0, counter)
    y = _apply_axis(np.asarray(B), y, 1, counter)
    y = _apply_axis(np.asarray(C), y, 2, counter)
    return y


class EigenScale3D:
    """Inverse diagonal of the element operator in its eigenspace.

    dz_inv[a, b, c] = 1 / (lam*alpha0 + alpha1*L_a + alpha2*L_b + alpha3*L_c)
    over the per-direction eigenvalues L.  On a uniform mesh one instance is
    shared by all elements.
    """

    def __init__(self, lam, dz_inv):
        self.lam = lam
        self.dz_inv = dz_inv

    @classmethod
    def build(cls, basis, geom, lam):
        if lam < 0.0:
            raise ValueError("the Helmholtz parameter must be non-negative")
        L = basis.Lambda
        a1, a2, a3 = geom.alphas
        den = (
            lam * geom.alpha0
            + a1 * L[:, None, None]
            + a2 * L[None, :, None]
            + a3 * L[None, None, :]
        )
        if np.min(den) <= 0.0:
            raise ValueError("eigenvalue scale is not positive; invalid tau_hat/lambda combination")
        return cls(lam, 1.0 / den)


class OperatorContext:
    """Everything needed to apply the trace operator on one mesh.

    Bundles the 1D basis, the mesh, per-direction metric coefficients, the
    precomputed inverse eigenvalue scale, and the direction-scaled small
    matrices the kernels consume.  Immutable after construction; attach a
    FlopCounter to audit operation counts.
    """

    def __init__(self, basis, mesh, lam=0.0, counter=None):
        self.basis = basis
        self.mesh = mesh
        self.lam = float(lam)
        self.counter = counter
        self.geom = mesh.geometry
        geom = self.geom
        n = basis.n

        self.eigen_scale = EigenScale3D.build(basis, geom, self.lam)
        self.dz_inv = self.eigen_scale.dz_inv

        self.T = basis.S.T @ basis.M  # nodal face data -> eigenspace
        self.MS = basis.M @ basis.S   # eigenspace -> nodal residual
        self.BS_dir = [a * basis.B_S for a in geom.alphas]

        gcc_diag = np.diag(basis.GCC).copy()
        if np.max(np.abs(basis.GCC - np.diag(gcc_diag))) > 1e-14 * max(np.max(np.abs(gcc_diag)), 1.0):
            raise ValueError("opposing-face block is not diagonal; unsupported trace basis")
        w = basis.weights
        w2 = np.multiply.outer(w, w)
        self.face_weight = []  # alpha_d * GCC_ll * (w (x) w), normal axis at position d
        self.gcc_hat = []      # alpha_d * GCC_ll, transformed basis
        for d in range(3):
            shape = [1, 1, 1]
            shape[d] = 2
            gd = (geom.alphas[d] * gcc_diag).reshape(shape)
            self.gcc_hat.append(gd)
            t1, t2 = [t for t in range(3) if t != d]
            sh1 = [1, 1, 1]
            sh1[t1] = n
            sh2 = [1, 1, 1]
            sh2[t2] = n
            self.face_weight.append(gd * w.reshape(sh1) * w.reshape(sh2))

        # Solver-side helpers (element inverse, flux couplings, hybridization).
        self.two_over_h = tuple(2.0 / h for h in mesh.h)
        self.tau_dir = tuple(t * basis.tau_hat for t in self.two_over_h)
        self.DMinv = basis.D * basis.inv_weights[None, :]
        self.MinvDT = basis.inv_weights[:, None] * basis.D.T
        self.mass3 = geom.alpha0 * (w[:, None, None] * w[None, :, None] * w[None, None, :])
        self.inv_mass3 = 1.0 / self.mass3

        self.face_tang_w = []  # (w (x) w) over the tangential axes of direction-d blocks
        self.face_mass = []    # physical face mass (h_t1/2)(h_t2/2)(w (x) w)
        for d in range(3):
            t1, t2 = [t for t in range(3) if t != d]
            shape = [1, n, n, n]
            shape[1 + d] = 1
            self.face_tang_w.append(w2.reshape([n if i == 1 + t1 or i == 1 + t2 else 1 for i in range(4)]))
            self.face_mass.append(geom.half_widths[t1] * geom.half_widths[t2] * w2)

    @property
    def n(self):
        return self.basis.n


def element_apply(ctx, u1, u2, u3):
    """Per-element residual of the plain (nodal) operator, batched.

    Inputs carry a leading element axis; the length-2 normal axis of each
    direction block sits at position 1+d.  Implements: inject all six faces
    into the element eigenspace through (S^T M, S^T M, B_S) patterns with
    metric weights, scale by the inverse eigenvalues, then emit the three
    directional residuals with the opposing-face term added nodally.
    """
    cnt = ctx.counter
    T, MS = ctx.T, ctx.MS

    a = _apply_axis(T, u1, 2, cnt)
    a = _apply_axis(T, a, 3, cnt)
    F = _apply_axis(ctx.BS_dir[0], a, 1, cnt)
    a = _apply_axis(T, u2, 1, cnt)
    a = _apply_axis(T, a, 3, cnt)
    F += _apply_axis(ctx.BS_dir[1], a, 2, cnt)
    a = _apply_axis(T, u3, 1, cnt)
    a = _apply_axis(T, a, 2, cnt)
    F += _apply_axis(ctx.BS_dir[2], a, 3, cnt)

    if cnt is not None:
        cnt.scale(F.size)
    U = F * ctx.dz_inv[None]

    out = []
    for d, u_d in enumerate((u1, u2, u3)):
        g = _apply_axis(ctx.BS_dir[d].T, U, 1 + d, cnt)
        for ax in range(3):
            if ax != d:
                g = _apply_axis(MS, g, 1 + ax, cnt)
        if cnt is not None:
            cnt.scale(u_d.size)
            cnt.add(u_d.size)
        out.append(ctx.face_weight[d][None] * u_d - g)
    return tuple(out)


def element_apply_transformed(ctx, u1, u2, u3):
    """Per-element residual in the transformed basis, batched.

    Same structure as element_apply, but the unknowns already live in the
    face eigenspaces, so every tangential mass/transform factor is the
    identity and only the B_S injections and reductions remain.
    """
    cnt = ctx.counter

    F = _apply_axis(ctx.BS_dir[0], u1, 1, cnt)
    F += _apply_axis(ctx.BS_dir[1], u2, 2, cnt)
    F += _apply_axis(ctx.BS_dir[2], u3, 3, cnt)

    if cnt is not None:
        cnt.scale(F.size)
    U = F * ctx.dz_inv[None]

    out = []
    for d, u_d in enumerate((u1, u2, u3)):
        g = _apply_axis(ctx.BS_dir[d].T, U, 1 + d, cnt)
        if cnt is not None:
            cnt.scale(u_d.size)
            cnt.add(u_d.size)
        out.append(ctx.gcc_hat[d][None] * u_d - g)
    return tuple(out)


def hdg_op_3d(u_tilde, ctx):
    """Global residual of the trace operator, r = K u_tilde, on all faces."""
    blocks = gather_batched(u_tilde)
    res = element_apply(ctx, *blocks)
    out = FluxField(ctx.mesh, ctx.basis.p)
    scatter_add_batched(res, out, include_dirichlet=True)
    return out


def hdg_op_3d_transformed(u_hat, ctx):
    """Global residual in the transformed basis, r_hat = K_hat u_hat."""
    blocks = gather_batched(u_hat)
    res = element_apply_transformed(ctx, *blocks)
    out = FluxField(ctx.mesh, ctx.basis.p)
    scatter_add_batched(res, out, include_dirichlet=True)
    return out


def transform_faces(field, A, counter=None):
    """Apply (A (x) A) to every face block; returns a new field."""
    out = FluxField(field.mesh, field.p)
    for d in range(3):
        X = _apply_axis(A, field.data[d], 1, counter)
        out.data[d] = _apply_axis(A, X, 2, counter)
    return out


class Context1D:
    """1D counterpart of OperatorContext: uniform elements of width h.

    The single metric coefficient is gamma = alpha0 * (2/h)^2 = 2/h with
    alpha0 = h/2, and the eigenvalue scale is lam*alpha0 + gamma*Lambda.
    """

    def __init__(self, basis, h, lam=0.0, n_elements=1):
        if h <= 0.0:
            raise ValueError("element width must be positive")
        if lam < 0.0:
            raise ValueError("the Helmholtz parameter must be non-negative")
        self.basis = basis
        self.h = float(h)
        self.lam = float(lam)
        self.n_elements = int(n_elements)
        self.alpha0 = 0.5 * self.h
        self.gamma = 2.0 / self.h
        den = self.lam * self.alpha0 + self.gamma * basis.Lambda
        if np.min(den) <= 0.0:
            raise ValueError("eigenvalue scale is not positive")
        self.dz_inv = 1.0 / den


def hdg_op_1d(u_tilde, ctx):
    """Per-element residual of the 1D trace operator.

    `u_tilde` has shape (n_elements, 2) with the two endpoint traces of each
    element.  Per element: F_E = gamma * B_S u, u_E = D_Z^-1 F_E,
    r = gamma * (G + C^T M^-1 C) u - gamma * B_S^T u_E.
    """
    u = np.atleast_2d(np.asarray(u_tilde, dtype=float))
    b = ctx.basis
    F = ctx.gamma * (u @ b.B_S.T)
    U = F * ctx.dz_inv[None, :]
    r = ctx.gamma * (u @ b.GCC.T) - ctx.gamma * (U @ b.B_S)
    return r


def kron3(A1, A2, A3):
    """Kronecker product with A_d acting on direction d (x1 fastest)."""
    return np.kron(A3, np.kron(A2, A1))


def _local_flux_shapes(n):
    return ((2, n, n), (n, 2, n), (n, n, 2))


def _dense_element_blocks(ctx):
    """Dense A_e, R_e, G_e of one element from the small-matrix definitions."""
    b, geom, lam = ctx.basis, ctx.geom, ctx.lam
    M, D, E, G, B, C = b.M, b.D, b.E, b.G, b.B, b.C
    a0 = geom.alpha0
    al = geom.alphas
    hw = geom.half_widths
    slot = lambda X, d: kron3(*[X if i == d else M for i in range(3)])

    Me = a0 * kron3(M, M, M)
    Ds = [hw[d] * al[d] * slot(D, d) for d in range(3)]
    Ee = sum(al[d] * slot(E, d) for d in range(3))
    Bs = [al[d] * slot(B, d) for d in range(3)]
    Cs = [hw[d] * al[d] * slot(C, d) for d in range(3)]
    Gs = [al[d] * slot(G, d) for d in range(3)]

    n3 = b.n**3
    Z = np.zeros((n3, n3))
    Ae = np.block(
        [
            [lam * Me + Ee, -Ds[0], -Ds[1], -Ds[2]],
            [-Ds[0].T, -Me, Z, Z],
            [-Ds[1].T, Z, -Me, Z],
            [-Ds[2].T, Z, Z, -Me],
        ]
    )
    nn2 = 2 * b.n**2
    Re = np.zeros((4 * n3, 3 * nn2))
    for d in range(3):
        cols = slice(d * nn2, (d + 1) * nn2)
        Re[:n3, cols] = Bs[d]
        Re[(1 + d) * n3 : (2 + d) * n3, cols] = Cs[d]
    Ge = np.zeros((3 * nn2, 3 * nn2))
    for d in range(3):
        cols = slice(d * nn2, (d + 1) * nn2)
        Ge[cols, cols] = Gs[d]
    return Ae, Re, Ge


def _flatten_local(blocks):
    """Element-local flux vector: per direction, normal index fastest."""
    return np.concatenate([np.asarray(b).ravel(order="F") for b in blocks])


def _dense_element_matrix_free(ctx):
    """Element matrix by pushing unit vectors through the tensor kernels."""
    n = ctx.basis.n
    shapes = _local_flux_shapes(n)
    nn2 = 2 * n * n
    nloc = 3 * nn2
    units = []
    for d, shape in enumerate(shapes):
        arr = np.zeros((nloc,) + shape)
        idx = np.unravel_index(np.arange(nn2), shape, order="F")
        arr[np.arange(d * nn2, (d + 1) * nn2), idx[0], idx[1], idx[2]] = 1.0
        units.append(arr)
    res = element_apply(ctx, *units)
    cols = [r.transpose(0, 3, 2, 1).reshape(nloc, -1) for r in res]
    return np.concatenate(cols, axis=1).T


def assemble_dense_element(ctx, mode="checked"):
    """Dense element operator over the 6 (p+1)^2 local flux coefficients.

    Local ordering: direction blocks in order, each flattened with the
    normal (low/high) index fastest, then the lower tangential coordinate.
    `mode` selects the construction: "schur" eliminates the interior of the
    dense first-order block system, "matrix_free" probes the tensor kernels
    with unit vectors, and "checked" (default) computes both and verifies
    they agree.
    """
    if ctx.basis.p > 4:
        warnings.warn("dense element assembly is O(p^8); intended for p <= 4", stacklevel=2)
    if mode not in ("schur", "matrix_free", "checked"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "matrix_free":
        return _dense_element_matrix_free(ctx)
    Ae, Re, Ge = _dense_element_blocks(ctx)
    K = Ge - Re.T @ np.linalg.solve(Ae, Re)
    if mode == "checked":
        K_mf = _dense_element_matrix_free(ctx)
        scale = max(np.max(np.abs(K)), 1.0)
        err = np.max(np.abs(K - K_mf))
        if err > 1e-10 * scale:
            raise RuntimeError(f"element oracle self-check failed: {err:.3e} vs {scale:.3e}")
    return K


def _local_to_global(ctx):
    """Map (element, local flux index) -> global flux index, all faces.

    The global vector concatenates the per-direction face arrays in C order
    (face major, lower tangential coordinate next, second tangential
    fastest), matching mesh.pack-style raveling.
    """
    mesh, n = ctx.mesh, ctx.basis.n
    nn2 = 2 * n * n
    offs = np.cumsum([0] + [mesh.n_faces[d] * n * n for d in range(3)])
    ne = mesh.n_elements
    loc2glob = np.empty((ne, 3 * nn2), dtype=np.int64)
    for d, shape in enumerate(_local_flux_shapes(n)):
        idx = np.unravel_index(np.arange(nn2), shape, order="F")
        side = idx[d]
        tang = [idx[ax] for ax in range(3) if ax != d]
        within = n * tang[0] + tang[1]
        faces = np.where(side[None, :] == 0, mesh.face_lo[d][:, None], mesh.face_hi[d][:, None])
        loc2glob[:, d * nn2 : (d + 1) * nn2] = offs[d] + faces * n * n + within[None, :]
    return loc2glob, offs[-1]


def assemble_dense_global(ctx, mode="schur"):
    """Dense global trace operator over all faces (Dirichlet included)."""
    Ke = assemble_dense_element(ctx, mode)
    loc2glob, N = _local_to_global(ctx)
    K = np.zeros((N, N))
    for e in range(ctx.mesh.n_elements):
        g = loc2glob[e]
        K[np.ix_(g, g)] += Ke
    return K
