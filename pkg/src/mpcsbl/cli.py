"""Command line entry point: ``mpcsbl {gen,solve,bench,selfcheck}``.

Exit status is 0 on success, 1 on usage errors and 2 on numerical failures.
"""

import argparse
import json
import logging
import sys

import numpy as np

from . import bench, checks
from .datagen import NOISELESS, GenSpec, gen_instance
from .instance_io import load_instance, save_instance
from .model import NumericalError, SolverConfig
from .msbl import MsblConfig, run_msbl
from .solver import run_em

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL = 0, 1, 2

# per-sweep defaults: (plan kind, base dimensions, sweep values)
BENCH_DEFAULTS = {
    "ratio": ("ratio_sweep", dict(m=25, n=50, l=3, k=16), (2, 3, 4, 5, 6)),
    "sparsity": ("sparsity_sweep", dict(m=25, n=50, l=3, k=16),
                 (8, 12, 16, 20, 24)),
    "snr": ("snr_sweep", dict(m=25, n=50, l=3, k=16), (5, 10, 15, 20, 25)),
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


def _float_list(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}")


def _snr(text):
    if text == NOISELESS:
        return text
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"SNR must be a number or 'noiseless', got {text!r}")


def build_parser():
    p = _Parser(prog="mpcsbl", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    g = sub.add_parser("gen", help="write a random problem instance")
    g.add_argument("--m", type=int, default=25)
    g.add_argument("--n", type=int, default=50)
    g.add_argument("--l", type=int, default=3)
    g.add_argument("--k", type=int, default=16)
    g.add_argument("--num-blocks", type=int, default=4)
    g.add_argument("--snr", type=_snr, default=NOISELESS)
    g.add_argument("--normalize-columns", action="store_true")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)

    s = sub.add_parser("solve", help="run one method on an instance file")
    s.add_argument("--input", required=True)
    s.add_argument("--method", choices=bench.METHODS, default="mpcsbl")
    s.add_argument("--beta", type=float, default=1.0)
    s.add_argument("--tol", type=float, default=1e-6)
    s.add_argument("--max-iter", type=int, default=500)
    s.add_argument("--noise", choices=bench.NOISE_MODES, default="oracle",
                   help="oracle uses the noise level stored by 'gen'; "
                        "falls back to learn when the file has none")
    s.add_argument("--lambda", dest="lam", type=float, default=None,
                   help="fixed noise precision (overrides --noise)")
    s.add_argument("--out", help="write the estimate and report as JSON")

    b = sub.add_parser("bench", help="Monte-Carlo sweeps")
    b.add_argument("kind", choices=sorted(BENCH_DEFAULTS))
    b.add_argument("--trials", type=int, default=100)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--betas", type=_float_list, default=[0.0, 0.5, 1.0])
    b.add_argument("--methods", default="mpcsbl,msbl")
    b.add_argument("--values", type=_float_list, default=None,
                   help="sweep values (N/M ratios, K, or SNR in dB)")
    b.add_argument("--snr", default=None,
                   help="data SNR in dB or 'noiseless' for ratio/sparsity "
                        "sweeps; comma-separated sweep values for 'snr'")
    b.add_argument("--m", type=int)
    b.add_argument("--n", type=int)
    b.add_argument("--l", type=int)
    b.add_argument("--k", type=int)
    b.add_argument("--num-blocks", type=int, default=4)
    b.add_argument("--normalize-columns", action="store_true")
    b.add_argument("--success-nmse", type=float, default=1e-4)
    b.add_argument("--tol", type=float, default=1e-6)
    b.add_argument("--max-iter", type=int, default=500)
    b.add_argument("--noise", choices=bench.NOISE_MODES, default="oracle")
    b.add_argument("--workers", type=int, default=1)
    b.add_argument("--out", help="aggregate CSV (default: stdout)")
    b.add_argument("--trials-out", help="per-trial CSV")

    c = sub.add_parser("selfcheck", help="run the randomised consistency checks")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--count", type=int, default=200)
    return p


def _cmd_gen(args):
    spec = GenSpec(m=args.m, n=args.n, l=args.l, k=args.k,
                   num_blocks=args.num_blocks, snr_db=args.snr,
                   normalize_columns=args.normalize_columns, seed=args.seed)
    inst, support, blocks, sigma2 = gen_instance(spec)
    meta = {
        "seed": spec.seed,
        "spec": {"m": spec.m, "n": spec.n, "l": spec.l, "k": spec.k,
                 "num_blocks": spec.num_blocks, "snr_db": spec.snr_db,
                 "normalize_columns": spec.normalize_columns},
        "sigma2": sigma2,
        "support": support,
        "blocks": [list(b) for b in blocks],
    }
    save_instance(args.out, inst, meta)
    print(f"wrote {args.out} (M={spec.m}, N={spec.n}, L={spec.l}, K={spec.k})")
    return EXIT_OK


def _solve_noise(args):
    if args.lam is not None:
        return False, args.lam
    if args.noise == "oracle":
        with open(args.input) as fh:
            sigma2 = json.load(fh).get("metadata", {}).get("sigma2")
        if sigma2 is not None:
            return False, bench.NOISELESS_LAMBDA if sigma2 == 0 else 1.0 / sigma2
        logging.getLogger(__name__).info(
            "no stored noise level in %s, learning it instead", args.input)
    return True, "auto"


def _cmd_solve(args):
    inst = load_instance(args.input)
    learn, lam0 = _solve_noise(args)
    if args.method == "mpcsbl":
        report = run_em(inst, SolverConfig(
            beta=args.beta, tol=args.tol, max_iter=args.max_iter,
            noise_learning=learn, lambda_init=lam0))
    else:
        report = run_msbl(inst, MsblConfig(
            tol=args.tol, max_iter=args.max_iter, noise_learning=learn,
            lambda_init=lam0))
    print(f"method: {args.method}")
    print(f"iterations: {report.iterations}")
    print(f"converged: {report.converged}")
    print(f"lambda: {report.hyper.lam:.6g}")
    err = None
    if inst.truth is not None and np.any(inst.truth):
        err = bench.nmse(report.x_hat, inst.truth)
        print(f"NMSE: {err:.6e}")
    if args.out:
        with open(args.out, "w") as fh:
            json.dump({"method": args.method, "iterations": report.iterations,
                       "converged": report.converged, "nmse": err,
                       "lambda": report.hyper.lam,
                       "alpha": report.hyper.alpha.tolist(),
                       "b2": report.hyper.b2.tolist(),
                       "x_hat": report.x_hat.tolist()}, fh)
    return EXIT_OK


def plan_from_args(args):
    kind, dims, values = BENCH_DEFAULTS[args.kind]
    dims = dict(dims)
    for key in ("m", "n", "l", "k"):
        if getattr(args, key) is not None:
            dims[key] = getattr(args, key)
    snr_data = NOISELESS
    if args.kind == "snr":
        if args.snr is not None:
            values = _float_list(args.snr)
    elif args.snr is not None:
        snr_data = _snr(args.snr)
    if args.values is not None:
        values = args.values
    methods = tuple(m.strip() for m in args.methods.split(",") if m.strip())
    base = GenSpec(num_blocks=args.num_blocks, snr_db=snr_data,
                   normalize_columns=args.normalize_columns, **dims)
    return bench.ExperimentPlan(
        kind=kind, base=base, sweep_values=tuple(values),
        betas=tuple(args.betas), methods=methods, trials=args.trials,
        base_seed=args.seed, success_nmse=args.success_nmse, tol=args.tol,
        max_iter=args.max_iter, noise=args.noise)


def _cmd_bench(args):
    try:
        plan = plan_from_args(args)
    except (ValueError, argparse.ArgumentTypeError) as exc:
        raise UsageError(str(exc)) from exc
    result = bench.run_plan(plan, workers=args.workers)
    text = bench.aggregate_csv(result)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    if args.trials_out:
        with open(args.trials_out, "w") as fh:
            fh.write(bench.trials_csv(result))
    return EXIT_OK


def _cmd_selfcheck(args):
    results = checks.run_all(seed=args.seed, count=args.count)
    for name, passed, detail in results:
        print(f"[{'PASS' if passed else 'FAIL'}] {name} {detail}".rstrip())
    return EXIT_OK if all(r[1] for r in results) else EXIT_NUMERICAL


COMMANDS = {"gen": _cmd_gen, "solve": _cmd_solve, "bench": _cmd_bench,
            "selfcheck": _cmd_selfcheck}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return exc.code or EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
