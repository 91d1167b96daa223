"""Solution pipeline for the trace system.

Hybridize the initial guess, build the condensed right-hand side, run
preconditioned conjugate gradients on the trace unknowns, and recover the
interior solution and its gradient element by element.  A transformed-basis
variant conjugates the whole iteration by per-face eigenspace transforms,
which drops the tangential mass factors from both operator and
preconditioner.

Dirichlet data is lifted into the right-hand side once (subtracting the
operator applied to the boundary extension), so the iteration runs strictly
over interior and Neumann faces and the operator stays symmetric positive
definite there.  Dot products reduce over fixed-shape numpy vectors, so runs
are deterministic for a fixed thread configuration.
"""

import time
from dataclasses import dataclass

import numpy as np

from .basis import Basis1D
from .mesh import (
    DIRICHLET,
    NEUMANN,
    FluxField,
    gather_batched,
    pack_unknowns,
    scatter_add_batched,
    unpack_unknowns,
)
from .operator import (
    OperatorContext,
    _apply_axis,
    hdg_op_3d,
    hdg_op_3d_transformed,
    transform_faces,
)
from .preconditioner import (
    build_block_preconditioner,
    build_diagonal_preconditioner,
    transformed_preconditioner,
)

__all__ = [
    "SolverConfig",
    "SolveReport",
    "make_context",
    "resolve_tau_hat",
    "apply_element_inverse",
    "hybridize_initial_guess",
    "build_rhs",
    "recover_interior",
    "pcg",
    "solve",
    "solve_transformed",
]

PRECONDITIONER_KINDS = ("none", "diagonal", "block", "transformed")


@dataclass
class SolverConfig:
    """Numerical parameters of one solve.

    tau is interpreted per `tau_convention`: "element" fixes the physical
    face penalty tau_e (requires cubic elements, the reference penalty
    becomes tau*h/2), "reference" fixes tau_hat directly.  The stopping rule
    is ||r_k|| <= max(rtol*||r_0||, atol) in the Euclidean norm of the
    unknown vector.
    """

    lam: float = 0.0
    tau: float = 25.0
    tau_convention: str = "element"
    rtol: float = 1e-10
    atol: float = 0.0
    max_iters: int = 10000
    preconditioner: str = "block"
    measure_ops: bool = False

    def __post_init__(self):
        if self.lam < 0.0:
            raise ValueError("lam must be non-negative")
        if self.tau <= 0.0:
            raise ValueError("tau must be positive")
        if self.tau_convention not in ("element", "reference"):
            raise ValueError("tau_convention must be 'element' or 'reference'")
        if not 0.0 < self.rtol < 1.0:
            raise ValueError("rtol must lie in (0, 1)")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if self.preconditioner not in PRECONDITIONER_KINDS:
            raise ValueError(f"preconditioner must be one of {PRECONDITIONER_KINDS}")


@dataclass
class SolveReport:
    iterations: int
    relative_residual: float
    converged: bool
    wall_time: float
    time_per_iteration: float
    flops: int | None = None
    error_max: float | None = None
    error_l2: float | None = None


def resolve_tau_hat(mesh, cfg):
    """Reference penalty implied by the configured tau convention."""
    if cfg.tau_convention == "reference":
        return cfg.tau
    h = mesh.h
    if max(h) - min(h) > 1e-12 * max(h):
        raise ValueError("fixing the physical face penalty needs cubic elements; use tau_convention='reference'")
    return cfg.tau * h[0] / 2.0


def make_context(mesh, p, cfg, counter=None):
    """Basis plus operator context for one mesh/degree/config combination."""
    if counter is None and cfg.measure_ops:
        from .operator import FlopCounter

        counter = FlopCounter()
    basis = Basis1D(p, resolve_tau_hat(mesh, cfg))
    return OperatorContext(basis, mesh, cfg.lam, counter)


def apply_element_inverse(Fu, Fq, ctx):
    """Apply the interior block inverse to stacked (u, q1, q2, q3) data.

    Inputs are batched element arrays of shape (ne, n, n, n).  The inverse
    is evaluated by fast diagonalization: reduce the right-hand side to the
    u slot, transform into the element eigenspace, scale by the inverse
    eigenvalues, transform back, then derive the q slots and subtract the
    mass correction.  The underlying block matrix is symmetric indefinite
    (saddle point); only its eigenvalue-scale core is definite.
    """
    cnt = ctx.counter
    S = ctx.basis.S
    w = np.array(Fu, dtype=float, copy=True)
    for d in range(3):
        w -= ctx.two_over_h[d] * _apply_axis(ctx.DMinv, Fq[d], 1 + d, cnt)
    for d in range(3):
        w = _apply_axis(S.T, w, 1 + d, cnt)
    if cnt is not None:
        cnt.scale(w.size)
    w *= ctx.dz_inv[None]
    for d in range(3):
        w = _apply_axis(S, w, 1 + d, cnt)
    qs = tuple(
        -ctx.two_over_h[d] * _apply_axis(ctx.MinvDT, w, 1 + d, cnt) - ctx.inv_mass3[None] * Fq[d]
        for d in range(3)
    )
    return w, qs


def hybridize_initial_guess(u, ctx, g_D=None, g_N=None):
    """Trace field consistent with an interior field u.

    The gradient is taken as the strong nodal derivative per direction; on
    interior faces the trace is the penalty-weighted average
    (u+ + u-)/2 - (q+ n+ + q- n-)/(2 tau), Dirichlet faces take their data,
    Neumann faces use the one-sided analogue u + (g_N - q n)/tau.
    """
    mesh = ctx.mesh
    n = ctx.basis.n
    u = np.asarray(u, dtype=float).reshape(mesh.n_elements, n, n, n)
    field = FluxField(mesh, ctx.basis.p)
    for d in range(3):
        q = ctx.two_over_h[d] * _apply_axis(ctx.basis.Dhat, u, 1 + d)
        u_lo = np.take(u, 0, axis=1 + d)
        u_hi = np.take(u, n - 1, axis=1 + d)
        qn_lo = -np.take(q, 0, axis=1 + d)
        qn_hi = np.take(q, n - 1, axis=1 + d)

        nf = mesh.n_faces[d]
        usum = np.zeros((nf, n, n))
        qnsum = np.zeros((nf, n, n))
        usum[mesh.face_lo[d]] += u_lo
        usum[mesh.face_hi[d]] += u_hi
        qnsum[mesh.face_lo[d]] += qn_lo
        qnsum[mesh.face_hi[d]] += qn_hi

        tau = ctx.tau_dir[d]
        kind = mesh.face_kind[d]
        vals = 0.5 * usum - qnsum / (2.0 * tau)
        boundary = kind == NEUMANN
        if np.any(boundary):
            gn = g_N.data[d][boundary] if g_N is not None else 0.0
            vals[boundary] = usum[boundary] - (qnsum[boundary] - gn) / tau
        dirichlet = kind == DIRICHLET
        vals[dirichlet] = g_D.data[d][dirichlet] if g_D is not None else 0.0
        field.data[d] = vals
    return field


def _flux_couplings(ctx, u, qs):
    """Per-element face blocks B_d^T u + C_d^T q_d for all directions."""
    cnt = ctx.counter
    geom = ctx.geom
    blocks = []
    for d in range(3):
        y = _apply_axis(ctx.basis.B.T, u, 1 + d, cnt)
        y *= geom.alphas[d] * ctx.face_tang_w[d]
        z = _apply_axis(ctx.basis.C.T, qs[d], 1 + d, cnt)
        z *= geom.half_widths[d] * geom.alphas[d] * ctx.face_tang_w[d]
        blocks.append(y + z)
    return blocks


def build_rhs(f, g_D, g_N, ctx):
    """Condensed right-hand side on the trace unknowns.

    Per element, apply the mass matrix to f, run it through the element
    inverse, and subtract the face couplings of the result (the interior
    rows enter the condensed system as F = g_N - R^T A^-1 (M f, 0));
    Neumann data adds its face integral, and Dirichlet data is lifted by
    subtracting the operator applied to the boundary extension.  Dirichlet
    slots of the result are zero.
    """
    mesh = ctx.mesh
    n = ctx.basis.n
    f = np.asarray(f, dtype=float).reshape(mesh.n_elements, n, n, n)
    Fu = ctx.mass3[None] * f
    zeros = tuple(np.zeros_like(Fu) for _ in range(3))
    u, qs = apply_element_inverse(Fu, zeros, ctx)

    F = FluxField(mesh, ctx.basis.p)
    couplings = [-blk for blk in _flux_couplings(ctx, u, qs)]
    scatter_add_batched(couplings, F, include_dirichlet=True)

    if g_N is not None:
        for d in range(3):
            m = mesh.face_kind[d] == NEUMANN
            if np.any(m):
                F.data[d][m] += ctx.face_mass[d][None] * g_N.data[d][m]

    if g_D is not None:
        lift = FluxField(mesh, ctx.basis.p)
        nonzero = False
        for d in range(3):
            m = mesh.face_kind[d] == DIRICHLET
            lift.data[d][m] = g_D.data[d][m]
            nonzero = nonzero or np.any(lift.data[d])
        if nonzero:
            Klift = hdg_op_3d(lift, ctx)
            for d in range(3):
                F.data[d] -= Klift.data[d]

    return F.zero_dirichlet()


def recover_interior(f, u_tilde, ctx):
    """Interior solution and gradient from a converged trace field.

    Per element the interior rows read A (u, q) = (M_e f, 0) - R u_tilde,
    so the trace couplings (boundary faces included) are subtracted from
    the volume right-hand side before the element inverse.
    """
    mesh = ctx.mesh
    n = ctx.basis.n
    f = np.asarray(f, dtype=float).reshape(mesh.n_elements, n, n, n)
    blocks = gather_batched(u_tilde)
    Fu = ctx.mass3[None] * f
    Fq = []
    geom = ctx.geom
    for d in range(3):
        scaled = blocks[d] * (geom.alphas[d] * ctx.face_tang_w[d])
        Fu = Fu - _apply_axis(ctx.basis.B, scaled, 1 + d, ctx.counter)
        Fq.append(
            -_apply_axis(
                ctx.basis.C,
                blocks[d] * (geom.half_widths[d] * geom.alphas[d] * ctx.face_tang_w[d]),
                1 + d,
                ctx.counter,
            )
        )
    return apply_element_inverse(Fu, tuple(Fq), ctx)


def pcg(apply_K, apply_P, F, x0, rtol=1e-10, atol=0.0, max_iters=10000):
    """Preconditioned conjugate gradients, classical recurrence, no restart.

    Stops once ||r_k|| <= max(rtol*||r_0||, atol).  Returns
    (x, iterations, relative residual, converged); a non-finite residual or
    a non-positive curvature raises, since both signal an indefinite
    operator or a broken preconditioner.
    """
    x = np.array(x0, dtype=float, copy=True)
    r = F - apply_K(x)
    norm0 = float(np.linalg.norm(r))
    if not np.isfinite(norm0):
        raise FloatingPointError("non-finite initial residual")
    if norm0 == 0.0 or norm0 <= atol:
        return x, 0, 0.0, True
    threshold = max(rtol * norm0, atol)

    z = apply_P(r) if apply_P is not None else r.copy()
    rho = float(r @ z)
    p = z.copy()
    rn = norm0
    for it in range(1, max_iters + 1):
        w = apply_K(p)
        curv = float(p @ w)
        if not np.isfinite(curv) or curv <= 0.0:
            raise FloatingPointError("conjugate gradient breakdown: non-positive curvature")
        alpha = rho / curv
        x += alpha * p
        r -= alpha * w
        rn = float(np.linalg.norm(r))
        if not np.isfinite(rn):
            raise FloatingPointError("non-finite residual during iteration")
        if rn <= threshold:
            return x, it, rn / norm0, True
        z = apply_P(r) if apply_P is not None else r
        rho_new = float(r @ z)
        beta = rho_new / rho
        rho = rho_new
        p = z + beta * p
    return x, max_iters, rn / norm0, False


def _build_preconditioner(kind, ctx):
    if kind == "none":
        return None
    if kind == "diagonal":
        return build_diagonal_preconditioner(ctx)
    if kind == "block":
        return build_block_preconditioner(ctx)
    raise ValueError(f"unsupported preconditioner kind {kind!r}")


def _counter_ops(ctx):
    return ctx.counter.ops if ctx.counter is not None else None


def solve(u0, f, g_D, g_N, cfg, ctx):
    """Hybridize, build the right-hand side, iterate, recover (u, q)."""
    if cfg.preconditioner == "transformed":
        return solve_transformed(u0, f, g_D, g_N, cfg, ctx)
    ops0 = _counter_ops(ctx)
    prec = _build_preconditioner(cfg.preconditioner, ctx)
    u_tilde0 = hybridize_initial_guess(u0, ctx, g_D, g_N)
    F = build_rhs(f, g_D, g_N, ctx)
    mesh, p = ctx.mesh, ctx.basis.p

    def apply_K(v):
        return pack_unknowns(hdg_op_3d(unpack_unknowns(v, mesh, p), ctx))

    apply_P = prec.apply_packed if prec is not None else None
    t0 = time.perf_counter()
    x, iters, relres, conv = pcg(
        apply_K, apply_P, pack_unknowns(F), pack_unknowns(u_tilde0), cfg.rtol, cfg.atol, cfg.max_iters
    )
    wall = time.perf_counter() - t0

    flux = unpack_unknowns(x, mesh, p)
    _restore_dirichlet(flux, g_D)
    u, qs = recover_interior(f, flux, ctx)
    report = SolveReport(
        iterations=iters,
        relative_residual=relres,
        converged=conv,
        wall_time=wall,
        time_per_iteration=wall / max(iters, 1),
        flops=None if ops0 is None else _counter_ops(ctx) - ops0,
    )
    return u, qs, report


def solve_transformed(u0, f, g_D, g_N, cfg, ctx):
    """Same pipeline in the transformed basis.

    The right-hand side is mapped by (S^T (x) S^T) per face and the initial
    guess by (S^T M (x) S^T M); the iteration then uses the identity-factor
    operator with the eigenspace diagonal preconditioner, and the solution
    is mapped back by (S (x) S) before recovery.
    """
    ops0 = _counter_ops(ctx)
    prec = transformed_preconditioner(ctx)
    u_tilde0 = hybridize_initial_guess(u0, ctx, g_D, g_N)
    F = build_rhs(f, g_D, g_N, ctx)
    mesh, p = ctx.mesh, ctx.basis.p
    S = ctx.basis.S

    F_hat = transform_faces(F, S.T, ctx.counter).zero_dirichlet()
    x0_hat = transform_faces(u_tilde0, ctx.T, ctx.counter)

    def apply_K(v):
        return pack_unknowns(hdg_op_3d_transformed(unpack_unknowns(v, mesh, p), ctx))

    t0 = time.perf_counter()
    x, iters, relres, conv = pcg(
        apply_K, prec.apply_packed, pack_unknowns(F_hat), pack_unknowns(x0_hat), cfg.rtol, cfg.atol, cfg.max_iters
    )
    wall = time.perf_counter() - t0

    flux = transform_faces(unpack_unknowns(x, mesh, p), S, ctx.counter)
    _restore_dirichlet(flux, g_D)
    u, qs = recover_interior(f, flux, ctx)
    report = SolveReport(
        iterations=iters,
        relative_residual=relres,
        converged=conv,
        wall_time=wall,
        time_per_iteration=wall / max(iters, 1),
        flops=None if ops0 is None else _counter_ops(ctx) - ops0,
    )
    return u, qs, report


def _restore_dirichlet(flux, g_D):
    """Write the boundary data back into the Dirichlet slots of `flux`."""
    if g_D is None:
        flux.zero_dirichlet()
        return
    mesh = flux.mesh
    for d in range(3):
        m = mesh.face_kind[d] == DIRICHLET
        flux.data[d][m] = g_D.data[d][m]
