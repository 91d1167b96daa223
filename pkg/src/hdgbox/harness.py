"""Benchmark and verification driver.

Runs the manufactured-solution problem on (0, 2pi)^3 across sweeps of the
polynomial degree, the penalty, or the element count, for any subset of the
solver variants, and reports iterations, timings, and errors against the
exact solution.  Timing follows the warmup-plus-repetitions protocol with
the median reported; BLAS pools are pinned to one thread during timed
sections for reproducibility.

Results go to CSV (with a version header line) or JSON; the CSV loader
round-trips rows exactly.
"""

import csv
import json
import math
import time
from dataclasses import asdict, dataclass, fields

import numpy as np
from threadpoolctl import threadpool_limits

from .manufactured import exact_solution, rhs_f
from .mesh import DIRICHLET, FluxField, Mesh
from .operator import FlopCounter, hdg_op_3d, hdg_op_3d_transformed
from .preconditioner import (
    build_block_preconditioner,
    build_diagonal_preconditioner,
    transformed_preconditioner,
)
from .solver import SolverConfig, make_context, solve, solve_transformed

__all__ = [
    "ExperimentConfig",
    "ResultRow",
    "run_experiment",
    "write_rows",
    "read_rows",
    "dirichlet_data",
    "element_field",
    "error_norms",
]

RESULTS_HEADER = "# hdgbox results v1"
VARIANTS = ("unprec", "diag", "block", "trans")
_VARIANT_PRECOND = {"unprec": "none", "diag": "diagonal", "block": "block", "trans": "transformed"}

DOMAIN = (0.0, 2.0 * math.pi)


@dataclass
class ExperimentConfig:
    """One benchmark campaign; the sweep kind picks which list varies."""

    sweep: str = "single"  # p | tau | ne | single
    p: tuple = (4,)
    ne: tuple = (4,)  # elements per direction
    tau: tuple = (25.0,)
    lam: float = 0.0
    k: float = 2.0
    variants: tuple = ("trans",)
    reps: int = 3
    rtol: float = 1e-10
    seed: int = 0
    max_iters: int = 10000
    count_ops: bool = False
    out: str | None = None
    fmt: str = "csv"
    single_thread: bool = True

    def __post_init__(self):
        if self.sweep not in ("p", "tau", "ne", "single"):
            raise ValueError("sweep must be one of p, tau, ne, single")
        if not self.p or not self.ne or not self.tau:
            raise ValueError("sweep lists must be non-empty")
        if self.reps < 1:
            raise ValueError("reps must be at least 1")
        bad = [v for v in self.variants if v not in VARIANTS]
        if bad:
            raise ValueError(f"unknown solver variants: {bad}")
        if self.fmt not in ("csv", "json"):
            raise ValueError("fmt must be csv or json")

    def sweep_points(self):
        if self.sweep == "p":
            return [(p, self.ne[0], self.tau[0]) for p in self.p]
        if self.sweep == "ne":
            return [(self.p[0], ne, self.tau[0]) for ne in self.ne]
        if self.sweep == "tau":
            return [(self.p[0], self.ne[0], tau) for tau in self.tau]
        return [(self.p[0], self.ne[0], self.tau[0])]


@dataclass
class ResultRow:
    sweep: str
    variant: str
    p: int
    ne: int
    n_elements: int
    tau: float
    lam: float
    k: float
    rtol: float
    seed: int
    reps: int
    iterations: int
    converged: bool
    relative_residual: float
    t_total: float
    t_per_iteration: float
    t_per_dof_iteration: float
    error_max: float
    error_l2: float
    dof_equivalent: int
    n_trace_unknowns: int
    ops_operator: int
    ops_preconditioner: int


_ROW_TYPES = {f.name: f.type for f in fields(ResultRow)}


def element_field(mesh, basis, fn):
    """Evaluate fn(x1, x2, x3) at every element node, shape (ne, n, n, n)."""
    X1, X2, X3 = mesh.element_node_grids(basis.nodes)
    return np.broadcast_to(fn(X1, X2, X3), (mesh.n_elements,) + (basis.n,) * 3).copy()


def dirichlet_data(mesh, basis, fn):
    """FluxField holding fn on the Dirichlet faces, zero elsewhere."""
    g = FluxField(mesh, basis.p)
    for d in range(3):
        m = mesh.face_kind[d] == DIRICHLET
        if np.any(m):
            X1, X2, X3 = mesh.face_node_grids(d, basis.nodes)
            vals = np.broadcast_to(fn(X1, X2, X3), (mesh.n_faces[d], basis.n, basis.n))
            g.data[d][m] = vals[m]
    return g


def error_norms(u, u_exact, ctx):
    """Max and quadrature L2 norm of the nodal error."""
    diff = u - u_exact
    err_max = float(np.max(np.abs(diff)))
    err_l2 = float(np.sqrt(np.sum(ctx.mass3[None] * diff**2)))
    return err_max, err_l2


def _measure_ops(ctx, variant, flux_template):
    """Deterministic per-application operation counts (operator, preconditioner)."""
    counter = FlopCounter()
    saved = ctx.counter
    ctx.counter = counter
    probe = flux_template.copy()
    for d in range(3):
        probe.data[d][:] = 1.0
    if variant == "trans":
        hdg_op_3d_transformed(probe, ctx)
        op = counter.ops
        counter.reset()
        transformed_preconditioner(ctx).apply(probe, counter)
        pc = counter.ops
    else:
        hdg_op_3d(probe, ctx)
        op = counter.ops
        counter.reset()
        if variant == "diag":
            build_diagonal_preconditioner(ctx).apply(probe, counter)
        elif variant == "block":
            build_block_preconditioner(ctx).apply(probe, counter)
        pc = counter.ops
    ctx.counter = saved
    return op, pc


def _run_point(cfg, p, ne, tau, variant, verbose=False):
    mesh = Mesh((ne, ne, ne), (DOMAIN[0],) * 3, (DOMAIN[1],) * 3, "dirichlet")
    scfg = SolverConfig(
        lam=cfg.lam,
        tau=tau,
        tau_convention="element",
        rtol=cfg.rtol,
        max_iters=cfg.max_iters,
        preconditioner=_VARIANT_PRECOND[variant],
    )
    ctx = make_context(mesh, p, scfg)
    basis = ctx.basis

    f = element_field(mesh, basis, lambda a, b, c: rhs_f(a, b, c, cfg.k, cfg.lam))
    g_D = dirichlet_data(mesh, basis, lambda a, b, c: exact_solution(a, b, c, cfg.k))
    u_exact = element_field(mesh, basis, lambda a, b, c: exact_solution(a, b, c, cfg.k))

    rng = np.random.default_rng([cfg.seed, p, ne])
    u0 = rng.uniform(-1.0, 1.0, size=(mesh.n_elements, basis.n, basis.n, basis.n))

    run = solve_transformed if variant == "trans" else solve
    times = []
    u = qs = report = None
    for rep in range(cfg.reps + 1):  # first run warms caches and is discarded
        t0 = time.perf_counter()
        u, qs, report = run(u0, f, g_D, None, scfg, ctx)
        dt = time.perf_counter() - t0
        if rep > 0:
            times.append(dt)
    t_total = float(np.median(times))

    err_max, err_l2 = error_norms(u, u_exact, ctx)
    report.error_max, report.error_l2 = err_max, err_l2

    ops_op = ops_pc = 0
    if cfg.count_ops:
        ops_op, ops_pc = _measure_ops(ctx, variant, FluxField(mesh, p))

    dof_equiv = (p + 1) ** 3 * mesh.n_elements
    iters = report.iterations
    row = ResultRow(
        sweep=cfg.sweep,
        variant=variant,
        p=p,
        ne=ne,
        n_elements=mesh.n_elements,
        tau=tau,
        lam=cfg.lam,
        k=cfg.k,
        rtol=cfg.rtol,
        seed=cfg.seed,
        reps=cfg.reps,
        iterations=iters,
        converged=report.converged,
        relative_residual=report.relative_residual,
        t_total=t_total,
        t_per_iteration=t_total / max(iters, 1),
        t_per_dof_iteration=t_total / max(iters, 1) / dof_equiv,
        error_max=err_max,
        error_l2=err_l2,
        dof_equivalent=dof_equiv,
        n_trace_unknowns=mesh.n_trace_unknowns(p),
        ops_operator=ops_op,
        ops_preconditioner=ops_pc,
    )
    if verbose:
        status = "ok" if report.converged else "NOT CONVERGED"
        print(
            f"p={p} ne={ne}^3 tau={tau} {variant}: {iters} iterations, "
            f"err_max={err_max:.3e}, {t_total:.3f}s [{status}]"
        )
    return row


def run_experiment(cfg, verbose=False):
    """Run every sweep point for every variant; returns the result rows."""
    rows = []
    for p, ne, tau in cfg.sweep_points():
        for variant in cfg.variants:
            if cfg.single_thread:
                with threadpool_limits(limits=1):
                    rows.append(_run_point(cfg, p, ne, tau, variant, verbose))
            else:
                rows.append(_run_point(cfg, p, ne, tau, variant, verbose))
    if cfg.out:
        write_rows(rows, cfg.out, cfg.fmt)
    return rows


def _format_value(v):
    if isinstance(v, bool):
        return str(v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_rows(rows, path, fmt="csv"):
    if fmt == "json":
        with open(path, "w") as fh:
            json.dump({"schema": RESULTS_HEADER.lstrip("# "), "rows": [asdict(r) for r in rows]}, fh, indent=1)
        return
    with open(path, "w", newline="") as fh:
        fh.write(RESULTS_HEADER + "\n")
        writer = csv.DictWriter(fh, fieldnames=[f.name for f in fields(ResultRow)])
        writer.writeheader()
        for r in rows:
            writer.writerow({k: _format_value(v) for k, v in asdict(r).items()})


def _parse_value(name, text):
    t = _ROW_TYPES[name]
    if t in (bool, "bool"):
        return text == "True"
    if t in (int, "int"):
        return int(text)
    if t in (float, "float"):
        return float(text)
    return text


def read_rows(path):
    """Load rows written by write_rows (CSV flavour); exact round trip."""
    with open(path) as fh:
        header = fh.readline().rstrip("\n")
        if header != RESULTS_HEADER:
            raise ValueError(f"unrecognized results header: {header!r}")
        reader = csv.DictReader(fh)
        return [ResultRow(**{k: _parse_value(k, v) for k, v in rec.items()}) for rec in reader]
