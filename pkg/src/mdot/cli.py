"""Command-line front end: ``mdot {gen,solve,sweep,mnist,verify}``.

Exit codes: 0 success, 1 failed verification or bad usage, 2 instance
generation or input failure, 3 numerical instability, 4 non-convergence.
"""

from __future__ import annotations

import argparse
import csv
import io
import itertools
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import __version__
from .core import Marginals, NumericalInstability, Projector, entropy, h_min, nats_to_bits
from .datagen import (
    GenerationError,
    IdxFormatError,
    SyntheticSpec,
    mnist_cost_matrix,
    mnist_pairs,
    parse_idx,
    read_instance,
    synthetic_instance,
    write_instance,
)
from .linesearch import LineSearchError
from .mirror import ConvergenceError, make_config, mdot, solver_epsilon

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_GENERATION = 2
EXIT_INSTABILITY = 3
EXIT_NONCONVERGENCE = 4

THREADS_ENV = "MDOT_THREADS"
REFERENCE_GAMMA = 2.0 ** 14
REFERENCE_EPS = 1e-13

TRACE_COLUMNS = ("t", "k", "rho", "g", "elapsed_s")


def fmt(x):
    """17 significant digits, enough for a lossless float64 round-trip."""
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return "" if x is None else str(x)


def write_csv(rows, columns, out):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([fmt(row.get(c)) for c in columns])
    _emit(buf.getvalue(), out)


def write_json(obj, out):
    _emit(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n", out)


def _json_default(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"not JSON serializable: {type(x).__name__}")


def _emit(text, out):
    if out in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(out, "w", newline="") as f:
            f.write(text)


def _err(msg):
    print(f"mdot: {msg}", file=sys.stderr)


def _float_list(text):
    return [float(x) for x in text.split(",") if x]


def _int_list(text):
    return [int(x) for x in text.split(",") if x]


def _seeds(text):
    """``"8"`` means seeds 0..7; ``"3,5,9"`` lists them."""
    if "," in text:
        return _int_list(text)
    if ":" in text:
        a, b = text.split(":")
        return list(range(int(a), int(b)))
    return list(range(int(text)))


def _eps_arg(text):
    return None if text == "auto" else float(text)


# -- gen ---------------------------------------------------------------------

def cmd_gen(args):
    try:
        spec = SyntheticSpec(args.n, args.m, args.entropy, args.tolerance, args.seed)
        inst = synthetic_instance(spec)
    except GenerationError as err:
        _err(str(err))
        return EXIT_GENERATION
    except ValueError as err:
        _err(str(err))
        return EXIT_GENERATION
    out = args.out or f"instance_n{args.n}_m{args.m}_h{args.entropy:g}_s{args.seed}.mdot"
    write_instance(out, inst)
    header = dict(inst.header, path=out)
    if args.format == "json":
        write_json(header, None)
    else:
        write_csv([header], sorted(header), None)
    return EXIT_OK


# -- solve -------------------------------------------------------------------

def _load_instance(args):
    if args.instance:
        return read_instance(args.instance)
    return synthetic_instance(SyntheticSpec(args.n, args.m, args.entropy, args.tolerance, args.seed))


def _config(gamma_bar, T, eps, projector, hmin, max_iters, init="independent", warm_start="previous"):
    eps = solver_epsilon(hmin, gamma_bar) if eps is None else eps
    return make_config(gamma_bar, eps, projector, T=T, max_proj_iters=max_iters,
                       init=init, warm_start=warm_start)


def _trace_rows(report, timings=True):
    rows = []
    for row in report.trace.rows:
        rows.append({"t": row.t, "k": row.k, "rho": row.rho, "g": row.g,
                     "elapsed_s": row.elapsed_s if timings else 0.0})
    return rows


def _strip_timings(obj):
    if isinstance(obj, dict):
        return {k: (0.0 if k == "elapsed_s" else _strip_timings(v)) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_strip_timings(v) for v in obj]
    return obj


def cmd_solve(args):
    try:
        inst = _load_instance(args)
    except (GenerationError, ValueError, OSError) as err:
        _err(str(err))
        return EXIT_GENERATION
    m = inst.marginals
    try:
        cfg = _config(args.gamma_bar, args.T, args.eps, args.proj, h_min(m), args.max_iters,
                      args.init, args.warm_start)
    except ValueError as err:
        _err(str(err))
        return EXIT_FAIL
    try:
        report = mdot(inst.C, m, cfg)
    except NumericalInstability as err:
        _err(f"numerical instability: {err}")
        return EXIT_INSTABILITY
    except LineSearchError as err:
        _err(f"line search failed: {err}")
        return EXIT_INSTABILITY
    except ConvergenceError as err:
        _err(str(err))
        return EXIT_NONCONVERGENCE

    doc = report.to_dict()
    doc["trace_totals"] = report.trace.totals()
    doc["instance"] = inst.header
    doc["h_min_nats"] = h_min(m)
    doc["version"] = __version__
    if args.no_timings:
        doc = _strip_timings(doc)
    rows = _trace_rows(report, timings=not args.no_timings)
    if args.trace:
        write_csv(rows, TRACE_COLUMNS, args.trace)
    if args.format == "json":
        write_json(doc, args.out)
    else:
        write_csv(rows, TRACE_COLUMNS, args.out)
    return EXIT_OK


# -- sweep -------------------------------------------------------------------

SWEEP_COLUMNS = ("index", "seed", "n", "m", "entropy", "gamma_bar", "T", "eps", "projector",
                 "status", "iterations", "phi_prime_evals", "elapsed_s", "objective",
                 "final_rho", "reference_objective", "rel_error", "detail")
SUMMARY_COLUMNS = ("n", "m", "entropy", "gamma_bar", "T", "eps", "projector", "runs", "ok",
                   "iterations_mean", "iterations_p5", "iterations_p95", "elapsed_mean",
                   "elapsed_p5", "elapsed_p95", "rel_error_mean", "rel_error_p5", "rel_error_p95")


def _reference(C, m, gamma_bar=REFERENCE_GAMMA, eps=REFERENCE_EPS):
    """High-budget solve used as the comparison point for relative errors."""
    cfg = make_config(gamma_bar, eps, Projector.PNCG)
    return mdot(C, m, cfg).objective


def _reference_job(key):
    n, m_dim, h, tol, seed = key
    try:
        inst = synthetic_instance(SyntheticSpec(n, m_dim, h, tol, seed))
        return _reference(inst.C, inst.marginals)
    except (GenerationError, NumericalInstability, LineSearchError, ConvergenceError):
        return None


def _sweep_job(job):
    """One grid cell; runs in a worker process."""
    spec = SyntheticSpec(job["n"], job["m"], job["entropy"], job["tolerance"], job["seed"])
    row = {k: job[k] for k in ("index", "seed", "n", "m", "entropy", "gamma_bar", "T", "projector")}
    try:
        inst = synthetic_instance(spec)
    except GenerationError as err:
        row.update(status="generation_error", detail=str(err))
        return row
    m = inst.marginals
    try:
        cfg = _config(job["gamma_bar"], job["T"], job["eps"], job["projector"], h_min(m), job["max_iters"])
    except ValueError as err:
        row.update(status="config_error", detail=str(err))
        return row
    row["eps"] = cfg.epsilon
    row["T"] = cfg.T
    try:
        rep = mdot(inst.C, m, cfg)
    except (NumericalInstability, LineSearchError):
        row["status"] = "instability"
        return row
    except ConvergenceError:
        row["status"] = "nonconvergence"
        return row
    row.update(status="ok", iterations=rep.iterations, phi_prime_evals=rep.phi_evals,
               elapsed_s=sum(s.elapsed_s for s in rep.steps) if job["timings"] else 0.0,
               objective=rep.objective, final_rho=rep.final_rho)
    ref = job.get("reference_objective")
    if ref is not None:
        row.update(reference_objective=ref, rel_error=(rep.objective - ref) / ref)
    return row


def _workers(jobs):
    env = os.environ.get(THREADS_ENV)
    cap = int(env) if env else (os.cpu_count() or 1)
    return max(1, min(cap, jobs))


def _map(fn, items):
    """``map`` over a process pool capped by MDOT_THREADS; results keep input order."""
    workers = _workers(len(items))
    if workers == 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _instance_key(job):
    return (job["n"], job["m"], job["entropy"], job["tolerance"], job["seed"])


def run_grid(jobs, reference=False):
    """Evaluate jobs in parallel; rows come back in grid order.

    With ``reference`` each distinct instance is first solved once at a high
    budget and every row on it reports its relative error against that value.
    """
    if reference:
        keys = sorted({_instance_key(j) for j in jobs})
        refs = dict(zip(keys, _map(_reference_job, keys)))
        jobs = [dict(j, reference_objective=refs[_instance_key(j)]) for j in jobs]
    return _map(_sweep_job, jobs)


def _pct(values, q):
    return float(np.percentile(values, q)) if values else None


def summarize(rows):
    keys = ("n", "m", "entropy", "gamma_bar", "T", "eps", "projector")
    groups = {}
    for row in rows:
        groups.setdefault(tuple(row.get(k) for k in keys), []).append(row)
    out = []
    for key, members in groups.items():
        ok = [r for r in members if r["status"] == "ok"]
        it = [r["iterations"] for r in ok]
        el = [r["elapsed_s"] for r in ok]
        rel = [r["rel_error"] for r in ok if r.get("rel_error") is not None]
        out.append(dict(zip(keys, key), runs=len(members), ok=len(ok),
                        iterations_mean=float(np.mean(it)) if it else None,
                        iterations_p5=_pct(it, 5), iterations_p95=_pct(it, 95),
                        elapsed_mean=float(np.mean(el)) if el else None,
                        elapsed_p5=_pct(el, 5), elapsed_p95=_pct(el, 95),
                        rel_error_mean=float(np.mean(rel)) if rel else None,
                        rel_error_p5=_pct(rel, 5), rel_error_p95=_pct(rel, 95)))
    return out


def cmd_sweep(args):
    grid = itertools.product(args.entropy, args.gamma_bar, args.T or [None], args.eps, args.proj,
                             args.seeds)
    jobs = []
    for i, (h, gb, T, eps, proj, seed) in enumerate(grid):
        jobs.append(dict(index=i, seed=seed, n=args.n, m=args.m, entropy=h, tolerance=args.tolerance,
                         gamma_bar=gb, T=T, eps=eps, projector=proj, max_iters=args.max_iters,
                         timings=not args.no_timings))
    rows = run_grid(jobs, reference=args.reference)
    summary = summarize(rows)
    if args.format == "json":
        write_json({"rows": rows, "summary": summary}, args.out)
    else:
        write_csv(rows, SWEEP_COLUMNS, args.out)
        if args.summary:
            write_csv(summary, SUMMARY_COLUMNS, args.summary)
    failed = sum(r["status"] != "ok" for r in rows)
    if failed:
        _err(f"{failed} of {len(rows)} runs did not succeed (see status column)")
    return EXIT_OK


# -- mnist -------------------------------------------------------------------

MNIST_COLUMNS = ("pair", "image_r", "image_c", "entropy_r_bits", "entropy_c_bits", "gamma_bar", "T",
                 "eps", "projector", "status", "iterations", "phi_prime_evals", "elapsed_s",
                 "objective", "final_rho")


def cmd_mnist(args):
    try:
        images = parse_idx(args.images)
        pairs = mnist_pairs(images, args.pairs, args.seed)
    except (IdxFormatError, OSError, ValueError) as err:
        _err(str(err))
        return EXIT_GENERATION
    C = mnist_cost_matrix()
    rows = []
    for p, (i, j, r, c) in enumerate(pairs):
        m = Marginals(r, c)
        for gb in args.gamma_bar:
            cfg = _config(gb, args.T, args.eps, args.proj, h_min(m), args.max_iters)
            row = dict(pair=p, image_r=i, image_c=j, entropy_r_bits=nats_to_bits(entropy(r)),
                       entropy_c_bits=nats_to_bits(entropy(c)), gamma_bar=gb, T=cfg.T,
                       eps=cfg.epsilon, projector=cfg.projector.value)
            try:
                rep = mdot(C, m, cfg)
            except (NumericalInstability, LineSearchError):
                row["status"] = "instability"
            except ConvergenceError:
                row["status"] = "nonconvergence"
            else:
                row.update(status="ok", iterations=rep.iterations, phi_prime_evals=rep.phi_evals,
                           elapsed_s=sum(s.elapsed_s for s in rep.steps) if not args.no_timings else 0.0,
                           objective=rep.objective, final_rho=rep.final_rho)
            rows.append(row)
    if args.format == "json":
        write_json({"rows": rows}, args.out)
    else:
        write_csv(rows, MNIST_COLUMNS, args.out)
    return EXIT_OK


# -- verify ------------------------------------------------------------------

def cmd_verify(args):
    from .verify import CHECKS, QUICK, run_checks

    if args.criteria:
        numbers = _int_list(args.criteria)
        unknown = [n for n in numbers if n not in CHECKS]
        if unknown:
            _err(f"unknown criteria {unknown}")
            return EXIT_FAIL
    else:
        numbers = sorted(CHECKS) if args.all else list(QUICK)
    results = run_checks(numbers, mnist_path=args.mnist, report=lambda r: print(r.line(), flush=True))
    if args.format == "json":
        write_json([dict(number=r.number, name=r.name, status=r.status, measured=r.measured,
                         bound=r.bound, detail=r.detail, elapsed_s=r.elapsed_s) for r in results],
                   args.out)
    failed = [r.number for r in results if r.passed is False]
    if failed:
        _err(f"failed: {failed}")
        return EXIT_FAIL
    return EXIT_OK


# -- parser ------------------------------------------------------------------

def _instance_args(p):
    p.add_argument("--n", type=int, default=128, help="problem size")
    p.add_argument("--m", type=int, default=4, help="ambient dimension of the point clouds")
    p.add_argument("--tolerance", type=float, default=0.01, help="entropy window half-width (nats)")


def _solver_args(p):
    p.add_argument("--T", type=int, default=None, help="MD steps (default: the standard schedule)")
    p.add_argument("--max-iters", type=int, default=100_000, help="projection iteration cap")
    p.add_argument("--no-timings", action="store_true", help="write zero timings for byte-stable output")


class _Parser(argparse.ArgumentParser):
    # usage errors exit 1 so that 2 keeps meaning generation failure
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_FAIL, f"{self.prog}: error: {message}\n")


def build_parser():
    parser = _Parser(prog="mdot", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    projectors = [p.value for p in Projector]

    p = sub.add_parser("gen", help="write a synthetic instance file")
    _instance_args(p)
    p.add_argument("--entropy", type=float, required=True, help="target entropy as a fraction of log n")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="instance path")
    p.add_argument("--format", choices=("csv", "json"), default="json", help="format of the echoed header")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("solve", help="solve one instance")
    p.add_argument("--instance", help="instance file from 'mdot gen' (otherwise generated from --n/--entropy/--seed)")
    _instance_args(p)
    p.add_argument("--entropy", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--proj", choices=projectors, default="pncg")
    p.add_argument("--gamma-bar", type=float, required=True)
    p.add_argument("--eps", type=_eps_arg, default=None, help="projection tolerance or 'auto'")
    p.add_argument("--init", choices=("independent", "ones"), default="independent")
    p.add_argument("--warm-start", choices=("previous", "zero"), default="previous")
    _solver_args(p)
    p.add_argument("--format", choices=("csv", "json"), default="json",
                   help="json: report; csv: per-iteration trace")
    p.add_argument("--out", help="output path (default stdout)")
    p.add_argument("--trace", help="also write the CSV trace here")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("sweep", help="run a grid of solves")
    _instance_args(p)
    p.add_argument("--entropy", type=_float_list, default=[0.5], help="comma-separated fractions")
    p.add_argument("--seeds", type=_seeds, default=[0], help="count K, range a:b, or comma list")
    p.add_argument("--gamma-bar", type=_float_list, default=[512.0])
    p.add_argument("--T", type=_int_list, default=None, help="comma-separated step counts")
    p.add_argument("--eps", type=lambda s: [_eps_arg(x) for x in s.split(",")], default=[None])
    p.add_argument("--proj", type=lambda s: s.split(","), default=["sinkhorn", "pncg"])
    p.add_argument("--max-iters", type=int, default=100_000)
    p.add_argument("--reference", action="store_true",
                   help=f"add relative error against a gamma_bar={REFERENCE_GAMMA:g} solve")
    p.add_argument("--no-timings", action="store_true")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--out", help="rows output (default stdout)")
    p.add_argument("--summary", help="summary CSV path (csv format only)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("mnist", help="solve OT between sampled MNIST digit pairs")
    p.add_argument("--images", required=True, help="IDX3 images file")
    p.add_argument("--pairs", type=int, default=512)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--gamma-bar", type=_float_list, default=[256.0])
    p.add_argument("--proj", choices=projectors, default="pncg")
    p.add_argument("--eps", type=_eps_arg, default=None)
    _solver_args(p)
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--out")
    p.set_defaults(func=cmd_mnist)

    p = sub.add_parser("verify", help="run the numerical verification suite")
    p.add_argument("--criteria", help="comma-separated check numbers")
    p.add_argument("--all", action="store_true", help="run every check, including the slow ones")
    p.add_argument("--mnist", help="MNIST images file for check 15")
    p.add_argument("--format", choices=("csv", "json"), default="csv",
                   help="json also writes a machine-readable summary")
    p.add_argument("--out")
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    if getattr(args, "proj", None) is not None and isinstance(args.proj, list):
        bad = [p for p in args.proj if p not in {x.value for x in Projector}]
        if bad:
            _err(f"unknown projector(s) {bad}")
            return EXIT_FAIL
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
