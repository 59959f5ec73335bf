"""``damprank`` command-line interface.

Every subcommand writes its artifacts plus ``run.json`` into ``--out``.
Exit codes: 0 success, 1 usage or domain error, 2 data error, 3 numerical
failure (non-convergence, step cap).
"""

import argparse
import math
import platform
import sys
import time
import warnings
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from ._io import write_csv, write_json
from .analysis import (DEFAULT_FD_STEPS, correspondence_compare, default_edges, histogram,
                       kl_sweep, write_kl_csv)
from .exceptions import (ConvergenceWarning, DataError, NumericalError, StepCapError,
                         UsageError)
from .graph import (DANGLING_MODES, V_MODES, build_operator, gen_personalization,
                    load_personalization, parse_edge_list, scc_blocks, write_edge_list,
                    write_scc)
from .kernels import ConwayMaxwellPoisson, expand_values, parse_kernel_spec
from .krylov import (DEFAULT_EPS, DEFAULT_M_MAX, DEFAULT_TOL, RankJob, arnoldi_build,
                     batch_rank, krylov_rrqr_diag, load_basis, numerical_dimension,
                     save_basis)
from .solvers import block_solve, cascade_sweep, direct_series, gauss_seidel, power_method

SCHEMA = 1


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _common(p, graph=True, vec=True, krylov=False):
    if graph:
        p.add_argument("--graph", required=True, help="edge list file")
        p.add_argument("--format", choices=("tsv", "konect"), default="tsv")
    if vec:
        p.add_argument("--dangling", choices=DANGLING_MODES, default="patch_v")
        p.add_argument("--seed", type=int, default=0, help="personalization seed")
        p.add_argument("--v-mode", choices=V_MODES, default="nonnegative")
        p.add_argument("--v-file", help="personalization vector file (node,value)")
    if krylov:
        p.add_argument("--tol", type=float, default=DEFAULT_TOL, help="Arnoldi breakdown tolerance")
        p.add_argument("--eps", type=float, default=DEFAULT_EPS, help="series l1 tolerance")
        p.add_argument("--m-max", type=int, default=DEFAULT_M_MAX)
        p.add_argument("--basis", help="reuse a basis saved by the 'basis' subcommand")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--strict", action="store_true", help="sequential, bit-reproducible mode")
    p.add_argument("--config", help="key = value defaults file")


def build_parser():
    parser = _Parser(prog="damprank", description="Batch damped personalized PageRank.")
    parser.add_argument("--version", action="version", version=f"damprank {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    subs = {}

    p = subs["convert"] = sub.add_parser("convert", help="normalize an edge list to 0-based ids")
    _common(p, vec=False)

    p = subs["scc"] = sub.add_parser("scc", help="SCC block ordering")
    _common(p, vec=False)

    p = subs["basis"] = sub.add_parser("basis", help="build and save the Krylov basis")
    _common(p, krylov=True)
    p.add_argument("--save", help="basis path (default OUT/basis.bin)")

    for name, text in (("rank", "rank vectors for kernels"),
                       ("sweep", "histograms over damping ranges")):
        p = subs[name] = sub.add_parser(name, help=text)
        _common(p, krylov=True)
        p.add_argument("--kernel", action="append", required=True,
                       help="e.g. geometric:alpha=0.85 or log:gamma=0.7:0.99:0.01")
        p.add_argument("--rho", help="damping values overriding the kernel spec")
        p.add_argument("--derivative", action="store_true", help="also write trajectories")
    subs["sweep"].add_argument("--bins", type=int, default=100)

    p = subs["kl"] = sub.add_parser("kl", help="KL divergence sweep")
    _common(p, krylov=True)
    p.add_argument("--kernel", required=True)
    p.add_argument("--rho", help="grid (start:stop:step or a/b/c)")
    p.add_argument("--rho-o", type=float, required=True, help="reference damping value")
    p.add_argument("--fd-steps", default=",".join(repr(h) for h in DEFAULT_FD_STEPS))

    p = subs["compare"] = sub.add_parser("compare", help="models at corresponding parameters")
    _common(p, krylov=True)
    p.add_argument("--alpha", type=float, default=0.85)
    p.add_argument("--families", default="poisson,log")
    p.add_argument("--bins", type=int, default=100)

    p = subs["dim"] = sub.add_parser("dim", help="Krylov dimension diagnostics")
    _common(p, krylov=True)
    p.add_argument("--k-max", type=int, default=64)
    p.add_argument("--threshold", type=float, default=1e-17)

    p = subs["solve"] = sub.add_parser("solve", help="ambient reference solvers")
    _common(p)
    p.add_argument("--method", required=True,
                   choices=("power", "gauss-seidel", "block", "series", "cascade"))
    p.add_argument("--alpha", default="0.85", help="value, or range for cascade")
    p.add_argument("--solver-tol", type=float, default=1e-12)
    p.add_argument("--max-iter", type=int, default=100_000)
    p.add_argument("--control", action="store_true", help="cascade: also solve cold")

    p = subs["selftest"] = sub.add_parser("selftest", help="closed-form sanity checks")
    p.add_argument("--out", default=None)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--strict", action="store_true")
    p.add_argument("--config", help=argparse.SUPPRESS)
    return parser, subs


def read_config(path):
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    cfg = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, eq, value = line.partition("=")
        if not eq:
            raise UsageError(f"{path}:{lineno}: expected key = value")
        cfg[key.strip().replace("-", "_")] = value.strip()
    return cfg


def _apply_config(subparser, cfg):
    """Install config values as defaults; returns list-valued keys, which
    argparse would otherwise extend rather than replace."""
    actions = {a.dest: a for a in subparser._actions}
    defaults = {}
    lists = {}
    for key, value in cfg.items():
        action = actions.get(key)
        if action is None or key in ("config", "help"):
            raise UsageError(f"unknown config key {key!r}")
        if isinstance(action, argparse._StoreTrueAction):
            defaults[key] = value.lower() in ("1", "true", "yes", "on")
        elif isinstance(action, argparse._AppendAction):
            lists[key] = [s.strip() for s in value.split(";") if s.strip()]
        else:
            defaults[key] = action.type(value) if action.type else value
        action.required = False
    subparser.set_defaults(**defaults)
    return lists


def _config_path(argv):
    for i, tok in enumerate(argv):
        if tok == "--config" and i + 1 < len(argv):
            return argv[i + 1]
        if tok.startswith("--config="):
            return tok.split("=", 1)[1]
    return None


def parse_args(argv):
    parser, subs = build_parser()
    argv = list(argv)
    # config values become defaults before the real parse so that required
    # flags may come from the file and explicit flags still win
    lists = {}
    path = _config_path(argv)
    if path is not None and argv and argv[0] in subs:
        lists = _apply_config(subs[argv[0]], read_config(path))
    args = parser.parse_args(argv)
    if args.command is None:
        raise UsageError("missing subcommand; see damprank --help")
    for key, value in lists.items():
        if getattr(args, key) is None:
            setattr(args, key, value)
    if args.strict:
        args.threads = 1
    if args.threads < 1:
        raise UsageError("--threads must be at least 1")
    for name in ("tol", "eps", "solver_tol"):
        if hasattr(args, name) and not getattr(args, name) > 0:
            raise UsageError(f"--{name.replace('_', '-')} must be positive")
    return args


class Run:
    """Collects timings, results and outputs for ``run.json``."""

    def __init__(self, args):
        self.args = args
        self.out = Path(args.out) if args.out else None
        self.timings = {}
        self.results = {}
        self.outputs = []
        self.graph_hash = None
        self.basis_m = None

    def timed(self, key, fn, *a, **kw):
        t0 = time.perf_counter()
        val = fn(*a, **kw)
        self.timings[key] = time.perf_counter() - t0
        return val

    def output(self, path):
        self.outputs.append(Path(path).name)
        return path

    def finish(self, exit_code=0):
        if self.out is None:
            return exit_code
        config = {k: v for k, v in sorted(vars(self.args).items())}
        payload = {
            "schema": SCHEMA,
            "command": self.args.command,
            "config": config,
            "graph_hash": self.graph_hash,
            "basis_m": self.basis_m,
            "exit_code": exit_code,
            "outputs": sorted(self.outputs),
            "results": self.results,
            "timings": self.timings,
            "versions": {"damprank": __version__, "numpy": np.__version__,
                         "scipy": scipy.__version__, "python": platform.python_version()},
        }
        write_json(self.out / "run.json", payload)
        return exit_code


def _load_graph(run):
    g = run.timed("parse", parse_edge_list, run.args.graph, run.args.format)
    run.graph_hash = g.digest
    if not g.directed:
        warnings.warn("undirected (sym) input is read as listed; edges are not symmetrized")
    return g


def _load_vector(run, g):
    a = run.args
    if a.v_file:
        return load_personalization(a.v_file, g)
    return gen_personalization(g.n, a.seed, a.v_mode)


def _setup(run, need_basis=True):
    g = _load_graph(run)
    pv = _load_vector(run, g)
    P = run.timed("operator", build_operator, g, run.args.dangling, pv)
    basis = None
    if need_basis:
        if getattr(run.args, "basis", None):
            basis = run.timed("basis_load", load_basis, run.args.basis)
            meta = basis.meta
            if meta.get("graph_hash") != g.digest:
                raise DataError("saved basis was built for a different graph")
            if not run.args.v_file and (meta.get("v_seed") != pv.seed
                                        or meta.get("v_mode") != pv.mode):
                raise DataError("saved basis was built for a different personalization vector")
            if meta.get("dangling_mode") != P.dangling_mode:
                raise DataError("saved basis was built with a different dangling mode")
        else:
            basis = run.timed("arnoldi", arnoldi_build, P, pv, run.args.tol, run.args.m_max)
        run.basis_m = basis.m
    return g, pv, P, basis


def _tag(kernel):
    if isinstance(kernel, ConwayMaxwellPoisson):
        return f"cmp-nu{kernel.nu!r}"
    return kernel.family


def _jobs(args, want_derivative=False):
    jobs = []
    override = expand_values(args.rho) if args.rho else None
    for spec in args.kernel:
        kernel, rhos = parse_kernel_spec(spec)
        rhos = override if override is not None else rhos
        if not rhos:
            raise UsageError(f"no damping value given for {spec!r}")
        for r in rhos:
            kernel.check(r)
        jobs.append(RankJob(kernel, rhos, want_derivative, want_ambient_lift=True))
    return jobs


def _write_vector(run, name, labels, x):
    return run.output(write_csv(run.out / name, ["node", "score"], zip(labels, x.tolist())))


def _raise_batch_errors(result):
    for err in result.errors:
        print(f"damprank: {err.kernel_id} at {err.rho!r}: {err.error}", file=sys.stderr)
    if result.errors:
        first = result.errors[0].error
        raise first


def cmd_convert(run):
    g = _load_graph(run)
    run.output(write_edge_list(g, run.out / "edges.tsv"))
    run.output(write_csv(run.out / "labels.csv", ["node", "label"], enumerate(g.node_labels())))
    run.results = {"n": g.n, "edges": g.n_edges, "unique_edges": len(g.unique_edges)}
    return 0


def cmd_scc(run):
    g = _load_graph(run)
    order = run.timed("scc", scc_blocks, g)
    for path in write_scc(g, order, run.out):
        run.output(path)
    sizes = order.block_sizes
    run.results = {"n": g.n, "blocks": order.n_blocks, "lscc_index": order.lscc_index,
                   "lscc_size": int(sizes[order.lscc_index]) if order.n_blocks else 0}
    return 0


def cmd_basis(run):
    _, pv, P, basis = _setup(run)
    path = Path(run.args.save) if run.args.save else run.out / "basis.bin"
    save_basis(basis, path, extra={"dangling_count": P.dangling_count})
    run.output(path)
    run.output(str(path) + ".json")
    run.results = {"m": basis.m, "happy": basis.happy, "sigma": basis.sigma,
                   "h_last": basis.breakdown_residual}
    return 0


def cmd_rank(run):
    g, _, P, basis = _setup(run)
    jobs = _jobs(run.args, run.args.derivative)
    result = run.timed("evaluate", batch_rank, basis, jobs, run.args.eps, run.args.threads)
    labels = g.node_labels()
    summary = []
    for row in result.rows:
        kernel = next(j.kernel for j in jobs if j.kernel.kernel_id == row.kernel_id)
        _write_vector(run, f"rank_{_tag(kernel)}_{row.rho!r}.csv", labels, row.x)
        if row.xdot is not None:
            _write_vector(run, f"traj_{_tag(kernel)}_{row.rho!r}.csv", labels, row.xdot)
        summary.append((row.kernel_id, row.rho, row.K_used, row.tail_bound, float(row.x.sum())))
    run.output(write_csv(run.out / "rank_summary.csv",
                         ["kernel", "rho", "K_used", "tail_bound", "mass"], summary))
    run.results = {"rows": len(result.rows), "errors": len(result.errors)}
    _raise_batch_errors(result)
    return 0


def cmd_sweep(run):
    g, _, P, basis = _setup(run)
    jobs = _jobs(run.args)
    result = run.timed("evaluate", batch_rank, basis, jobs, run.args.eps, run.args.threads)
    summary = []
    for job in jobs:
        rows = [r for r in result.rows if r.kernel_id == job.kernel.kernel_id]
        if not rows:
            continue
        edges = default_edges([r.x for r in rows], run.args.bins)
        for r in rows:
            h = histogram(r.x, edges)
            run.output(h.write_csv(run.out / f"hist_{_tag(job.kernel)}_{r.rho!r}.csv"))
            summary.append((r.kernel_id, r.rho, r.K_used, r.tail_bound, float(r.x.sum())))
    run.output(write_csv(run.out / "sweep.csv",
                         ["kernel", "rho", "K_used", "tail_bound", "mass"], summary))
    run.results = {"rows": len(result.rows), "errors": len(result.errors)}
    _raise_batch_errors(result)
    return 0


def cmd_kl(run):
    _, pv, P, basis = _setup(run)
    if pv.mode != "nonnegative":
        raise UsageError("KL analysis needs --v-mode nonnegative")
    kernel, rhos = parse_kernel_spec(run.args.kernel)
    if run.args.rho:
        rhos = expand_values(run.args.rho)
    if not rhos:
        raise UsageError("kl needs a damping grid (in --kernel or --rho)")
    steps = tuple(float(s) for s in run.args.fd_steps.split(",") if s.strip())
    records = run.timed("kl", kl_sweep, basis, kernel, rhos, run.args.rho_o, steps,
                        run.args.eps, run.args.threads)
    run.output(write_kl_csv(run.out / f"kl_{_tag(kernel)}.csv", kernel, records,
                            run.args.rho_o, steps))
    run.results = {"points": len(records),
                   "min_kl_rho": min(records, key=lambda r: r.kl).rho}
    return 0


def cmd_compare(run):
    _, pv, P, basis = _setup(run)
    if pv.mode != "nonnegative":
        raise UsageError("compare needs --v-mode nonnegative")
    fams = [f.strip() for f in run.args.families.split(",") if f.strip()]
    corr = run.timed("compare", correspondence_compare, basis, run.args.alpha, fams,
                     run.args.eps, run.args.bins)
    for key, point in corr.models.items():
        run.output(point.histogram.write_csv(run.out / f"hist_{_tag(point.kernel)}.csv"))
    run.output(write_csv(run.out / "compare_kl.csv", ["model_a", "model_b", "kl_nats"],
                         ((a, b, v) for (a, b), v in corr.pairwise_kl.items())))
    run.results = {"target_mean": corr.target_mean, "parameters": corr.parameters,
                   "models": {k: p.rho for k, p in corr.models.items()}}
    return 0


def cmd_dim(run):
    _, pv, P, basis = _setup(run)
    diag = run.timed("rrqr", krylov_rrqr_diag, P, pv, run.args.k_max)
    res = basis.residuals
    rows = []
    for k in range(max(len(diag), len(res))):
        rows.append((k + 1, float(diag[k]) if k < len(diag) else math.nan,
                     res[k] if k < len(res) else math.nan))
    run.output(write_csv(run.out / "dim.csv", ["k", "rrqr_abs_diag", "arnoldi_residual"], rows))
    run.results = {"rrqr_dimension": numerical_dimension(diag, run.args.threshold),
                   "arnoldi_m": basis.m, "arnoldi_happy": basis.happy}
    return 0


def cmd_solve(run):
    g, pv, P, _ = _setup(run, need_basis=False)
    a = run.args
    labels = g.node_labels()
    method = a.method
    alphas = expand_values(a.alpha)
    if method != "cascade" and len(alphas) != 1:
        raise UsageError(f"--method {method} takes a single --alpha")
    converged = True
    if method == "cascade":
        steps = run.timed("solve", cascade_sweep, P, pv, alphas, a.solver_tol, a.max_iter,
                          a.control)
        rows = []
        for s in steps:
            _write_vector(run, f"solve_cascade_{s.alpha!r}.csv", labels, s.x)
            cold = s.cold_report.iterations if s.cold_report else ""
            rows.append((s.alpha, s.report.iterations, s.report.final_residual, cold))
            converged &= s.report.converged
        run.output(write_csv(run.out / "cascade.csv",
                             ["alpha", "iterations", "final_residual", "cold_iterations"], rows))
        run.results = {"points": len(steps)}
    else:
        alpha = alphas[0]
        if method == "power":
            x, rep = run.timed("solve", power_method, P, pv, alpha, a.solver_tol, a.max_iter)
        elif method == "gauss-seidel":
            x, rep = run.timed("solve", gauss_seidel, P, pv, alpha, a.solver_tol, a.max_iter)
        elif method == "block":
            order = run.timed("scc", scc_blocks, g)
            x, rep = run.timed("solve", block_solve, P, order, pv, alpha, a.solver_tol, a.max_iter)
        else:
            from .kernels import Geometric
            x = run.timed("solve", direct_series, P, pv, Geometric(), alpha, a.solver_tol)
            rep = None
        _write_vector(run, f"solve_{method}_{alpha!r}.csv", labels, x)
        run.results = {"report": rep.as_dict() if rep else None, "mass": float(x.sum())}
        converged = rep.converged if rep else True
    return 0 if converged else 3


def cmd_selftest(run):
    from .selftest import run_selftest
    ok, lines = run_selftest()
    for line in lines:
        print(line)
    run.results = {"passed": ok, "checks": lines}
    return 0 if ok else 3


COMMANDS = {
    "convert": cmd_convert, "scc": cmd_scc, "basis": cmd_basis, "rank": cmd_rank,
    "sweep": cmd_sweep, "kl": cmd_kl, "compare": cmd_compare, "dim": cmd_dim,
    "solve": cmd_solve, "selftest": cmd_selftest,
}


def dispatch(argv):
    run = None
    try:
        args = parse_args(argv)
        run = Run(args)
        if run.out is not None:
            run.out.mkdir(parents=True, exist_ok=True)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", ConvergenceWarning)
            code = COMMANDS[args.command](run)
        for w in caught:
            print(f"damprank: warning: {w.message}", file=sys.stderr)
        return run.finish(code)
    except UsageError as exc:
        print(f"damprank: error: {exc}", file=sys.stderr)
        code = 1
    except (DataError, OSError) as exc:
        print(f"damprank: data error: {exc}", file=sys.stderr)
        code = 2
    except (NumericalError, StepCapError) as exc:
        print(f"damprank: numerical failure: {exc}", file=sys.stderr)
        code = 3
    if run is not None and run.out is not None:
        try:
            run.finish(code)
        except OSError:
            pass
    return code


def main(argv=None):
    sys.exit(dispatch(sys.argv[1:] if argv is None else argv))


if __name__ == "__main__":
    main()
