"""Command-line benchmark driver.

Exit status: 0 when every run converged, 2 otherwise.
"""

import argparse
import sys

from .harness import VARIANTS, ExperimentConfig, run_experiment


def build_parser():
    ap = argparse.ArgumentParser(
        prog="hdgbox",
        description="Manufactured-solution benchmark for the matrix-free trace solver.",
    )
    ap.add_argument("--sweep", choices=("p", "tau", "ne", "single"), default="single")
    ap.add_argument("--p", type=int, nargs="+", default=None, help="polynomial degrees")
    ap.add_argument("--ne", type=int, nargs="+", default=None, help="elements per direction")
    ap.add_argument("--tau", type=float, nargs="+", default=[25.0], help="face penalty values")
    ap.add_argument("--lambda", dest="lam", type=float, default=0.0, help="Helmholtz parameter")
    ap.add_argument("--k", type=float, default=None, help="stiffness parameter of the exact solution")
    ap.add_argument("--variant", choices=VARIANTS, nargs="+", default=["trans"])
    ap.add_argument("--rtol", type=float, default=1e-10)
    ap.add_argument("--reps", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--max-iters", type=int, default=10000)
    ap.add_argument("--out", default=None, help="write results to this path")
    ap.add_argument("--format", choices=("csv", "json"), default="csv")
    ap.add_argument("--count-ops", action="store_true", help="record exact operation counts")
    ap.add_argument(
        "--paper-scale",
        action="store_true",
        help="full-scale defaults (k=5, 8^3 elements) instead of the desk-scale ones",
    )
    ap.add_argument("--multi-thread", action="store_true", help="do not pin BLAS to one thread")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.paper_scale:
        k = 5.0 if args.k is None else args.k
        ne = [8] if args.ne is None else args.ne
        p = [16] if args.p is None else args.p
    else:
        k = 2.0 if args.k is None else args.k
        ne = [4] if args.ne is None else args.ne
        p = [4] if args.p is None else args.p

    cfg = ExperimentConfig(
        sweep=args.sweep,
        p=tuple(p),
        ne=tuple(ne),
        tau=tuple(args.tau),
        lam=args.lam,
        k=k,
        variants=tuple(args.variant),
        reps=args.reps,
        rtol=args.rtol,
        seed=args.seed,
        max_iters=args.max_iters,
        count_ops=args.count_ops,
        out=args.out,
        fmt=args.format,
        single_thread=not args.multi_thread,
    )
    rows = run_experiment(cfg, verbose=True)
    if args.out:
        print(f"wrote {len(rows)} rows to {args.out}")
    return 0 if all(r.converged for r in rows) else 2


if __name__ == "__main__":
    sys.exit(main())
