"""Command-line front end: ``lqcd-dd <command> [options]``.

Commands: generate, solve, plan, schedule, perfmodel, oracle.  Options may
also come from an INI file (``--config FILE``); each command reads the
section of the same name, keys spelled like the long options.  Flags given
on the command line win over the file.

Exit codes: 0 success, 2 configuration error, 3 no convergence,
4 internal invariant failure.
"""
from __future__ import annotations

import argparse
import configparser
import logging
import sys
import time

import numpy as np

from . import __version__, records
from .comm import (DeadlockError, MessageError, ScheduleError, bandwidth_threshold, build_schedule,
                   run_multirank, simulate_timeline, validate_schedule)
from .comm.timeline import BANDWIDTH, LATENCY
from .fgmres import FgmresParams, SolverError
from .lattice import (GaugeFileError, LatticeGeometry, Rng, generate_gauge, read_gauge, write_gauge)
from .lattice.fields import DegenerateDrawError
from .lattice.io import HEADER_SIZE, checksum
from .layout import FuseSpec, LayoutError
from .perfmodel import ChipModel, WorkingSetSpec, model_record, overheaded_limit
from .planner import PlanError, cost_compare, plan_nonuniform, plan_uniform
from .schwarz import DecompositionError, SchwarzParams, decompose
from .solve import SolveConfig, solve_single
from .wilson import OperatorParams, build_clover, count_flops

EXIT_OK, EXIT_CONFIG, EXIT_NOCONV, EXIT_INVARIANT = 0, 2, 3, 4

log = logging.getLogger("lqcd_dd")


class ConfigError(ValueError):
    pass


# -- argument types --------------------------------------------------------

def int_list(n: int | None = None):
    def parse(text: str):
        try:
            vals = tuple(int(v) for v in str(text).replace(" ", "").split(","))
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
        if n is not None and len(vals) != n:
            raise argparse.ArgumentTypeError(f"expected {n} values, got {len(vals)}")
        return vals
    return parse


def float_list(text: str):
    try:
        return tuple(float(v) for v in str(text).split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def domain_arg(text: str):
    if str(text).lower() == "none":
        return None
    return int_list(4)(text)


def bool_arg(text: str) -> bool:
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


dims4 = int_list(4)


# -- parser ----------------------------------------------------------------

def _gauge_options(p):
    p.add_argument("--dims", type=dims4, default=(8, 8, 8, 8), help="lattice extents x,y,z,t")
    p.add_argument("--kind", choices=("free", "random", "weak"), default="weak")
    p.add_argument("--eps", type=float, default=0.1, help="weak-field perturbation size")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--boundary", type=int_list(4), default=(1, 1, 1, 1),
                   help="boundary phases per axis (+1 periodic, -1 antiperiodic)")


def _common_options(p):
    sup = p.argument_default == argparse.SUPPRESS
    p.add_argument("--config", help="INI file with one section per command")
    p.add_argument("--json", action="store_true", help="print record lines instead of text",
                   **({"default": argparse.SUPPRESS} if sup else {}))
    p.add_argument("--records", help="append record lines to this file")
    p.add_argument("-v", "--verbose", action="store_true",
                   **({"default": argparse.SUPPRESS} if sup else {}))


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lqcd-dd", description=__doc__.split("\n")[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    _common_options(ap)
    # the same options are accepted after the command name
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    _common_options(common)
    sub = ap.add_subparsers(dest="command", required=True)
    _add = sub.add_parser
    sub.add_parser = lambda name, **kw: _add(name, parents=[common], **kw)

    p = sub.add_parser("generate", help="write a gauge configuration file")
    _gauge_options(p)
    p.add_argument("--precision", choices=("single", "double"), default="double")
    p.add_argument("-o", "--output", required=True)

    p = sub.add_parser("solve", help="solve A x = b with DD-preconditioned FGMRES-DR")
    _gauge_options(p)
    p.add_argument("--gauge", help="read the gauge field from this file instead of generating it")
    p.add_argument("--rhs-seed", type=int, default=2)
    p.add_argument("--mass", type=float, default=0.1)
    p.add_argument("--csw", type=float, default=1.0)
    p.add_argument("--domain", type=domain_arg, default=(4, 4, 4, 4), help="domain extents or 'none'")
    p.add_argument("--n-schwarz", type=int, default=16)
    p.add_argument("--n-mr", type=int, default=5)
    p.add_argument("--eo", type=bool_arg, default=True, help="even-odd preconditioned block solves")
    p.add_argument("--half-domain-storage", type=bool_arg, nargs="?", const=True, default=False)
    p.add_argument("--residual-mode", choices=("incremental", "recompute"), default="incremental")
    p.add_argument("--restart", type=int, default=16, help="m_r, basis size per cycle")
    p.add_argument("--deflation", type=int, default=4, help="k, harmonic Ritz vectors kept")
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--max-iter", type=int, default=1000)
    p.add_argument("--outer-precision", choices=("single", "double"), default="double")
    p.add_argument("--ranks", type=int, default=1, help="ranks along t (simulated)")
    p.add_argument("--rank-grid", type=dims4, help="full rank grid, overrides --ranks")
    p.add_argument("--schedule", choices=("overlap", "naive"), default="overlap")
    p.add_argument("--workers", type=int, help="cap on concurrently solved domains")
    p.add_argument("--compare-unpreconditioned", type=bool_arg, nargs="?", const=True, default=False)

    p = sub.add_parser("plan", help="load-balance report for a rank layout")
    p.add_argument("--dims", type=dims4, default=(64, 64, 64, 128))
    p.add_argument("--domain", type=dims4, default=(8, 4, 4, 4))
    p.add_argument("--rank-grid", type=dims4, default=(4, 4, 8, 8))
    p.add_argument("--cores", type=int, default=60)
    p.add_argument("--nonuniform", choices=tuple("xyzt"), help="search unequal splits of this axis")

    p = sub.add_parser("schedule", help="build, validate and simulate a communication schedule")
    p.add_argument("--split", default="tz", help="split axes, e.g. t, tz, xyzt")
    p.add_argument("--domain-grid", type=dims4, default=(2, 2, 4, 8))
    p.add_argument("--domain", type=dims4, default=(4, 4, 4, 4))
    p.add_argument("--variant", choices=("overlap", "naive"), default="overlap")
    p.add_argument("--costs", type=float_list, help="compute seconds per group (default: domains x 20 us)")
    p.add_argument("--bandwidth", type=float, default=BANDWIDTH, help="bytes/s")
    p.add_argument("--latency", type=float, default=LATENCY, help="seconds")
    p.add_argument("--iterations", type=int, default=4)
    p.add_argument("--sweep", type=int, default=0, help="number of bandwidth points to scan")
    p.add_argument("--gantt", type=bool_arg, nargs="?", const=True, default=True)

    p = sub.add_parser("perfmodel", help="analytic performance and working-set model")
    p.add_argument("--cores", type=int, default=61)
    p.add_argument("--clock", type=float, default=1.238, help="GHz")
    p.add_argument("--fma-fraction", type=float, help="default: from the flop count")
    p.add_argument("--overhead", type=float, help="instruction overhead factor (default 0.56/0.82)")
    p.add_argument("--domain", type=dims4, default=(8, 4, 4, 4))
    p.add_argument("--n-spinors", type=float, default=3.5)
    p.add_argument("--fuse", type=dims4, default=(4, 4, 1, 1))

    sub.add_parser("oracle", help="run the built-in self-checks")
    return ap


def _subparser(ap, name):
    for act in ap._actions:
        if isinstance(act, argparse._SubParsersAction):
            return act.choices[name]
    raise KeyError(name)


def apply_config(ap: argparse.ArgumentParser, path: str, command: str):
    """Use the [command] section of an INI file as defaults for that command."""
    cp = configparser.ConfigParser()
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}")
    if not cp.has_section(command):
        return
    sp = _subparser(ap, command)
    by_dest = {a.dest: a for a in sp._actions if a.dest != "help"}
    defaults = {}
    for key, raw in cp.items(command):
        dest = key.replace("-", "_")
        if dest not in by_dest:
            raise ConfigError(f"unknown key {key!r} in section [{command}]")
        act = by_dest[dest]
        try:
            val = act.type(raw) if act.type else raw
        except (argparse.ArgumentTypeError, ValueError) as exc:
            raise ConfigError(f"[{command}] {key}: {exc}")
        if act.choices is not None and val not in act.choices:
            raise ConfigError(f"[{command}] {key}: {val!r} not in {sorted(act.choices)}")
        defaults[dest] = val
    sp.set_defaults(**defaults)


# -- output ----------------------------------------------------------------

class Output:
    def __init__(self, args, stream=None):
        self.json = args.json
        self.stream = stream or sys.stdout
        self.path = args.records

    def text(self, line: str = ""):
        if not self.json:
            print(line, file=self.stream)

    def record(self, rec_kind: str, /, **fields):
        rec = records.make(rec_kind, **fields)
        line = records.dumps(rec)
        if self.json:
            print(line, file=self.stream)
        if self.path:
            with open(self.path, "a") as fh:
                fh.write(line + "\n")
        return rec


# -- commands ----------------------------------------------------------------

def _geometry(args) -> LatticeGeometry:
    try:
        return LatticeGeometry(args.dims, args.boundary)
    except ValueError as exc:
        raise ConfigError(str(exc))


def _make_gauge(args, geo):
    if args.kind != "free" and args.eps < 0:
        raise ConfigError("--eps must be >= 0")
    rng = Rng(args.seed)
    return generate_gauge(args.kind, geo, rng, eps=args.eps)


def cmd_generate(args, out: Output) -> int:
    geo = _geometry(args)
    gauge = _make_gauge(args, geo).astype(args.precision)
    path = write_gauge(gauge, args.output)
    digest = checksum(gauge)
    size = path.stat().st_size
    out.text(f"wrote {path} ({HEADER_SIZE} + {size - HEADER_SIZE} bytes)")
    out.text(f"sha256 {digest}")
    out.record("gauge", path=str(path), dims=list(geo.dims), kind=args.kind, seed=args.seed,
               eps=args.eps, precision=args.precision, checksum=digest, bytes=size)
    return EXIT_OK


def solve_config(args) -> SolveConfig:
    try:
        sp = SchwarzParams(args.n_schwarz, args.n_mr, args.eo, args.residual_mode,
                           "half" if args.half_domain_storage else "single", args.workers)
        fp = FgmresParams(args.restart, args.deflation, args.tol, args.max_iter, args.outer_precision)
        return SolveConfig(OperatorParams(args.mass, args.csw), args.domain, sp, fp)
    except ValueError as exc:
        raise ConfigError(str(exc))


def cmd_solve(args, out: Output) -> int:
    geo = _geometry(args)
    cfg = solve_config(args)
    grid = args.rank_grid or (1, 1, 1, args.ranks)
    plan = None
    try:
        if cfg.domain_dims is not None:
            decompose(geo, cfg.domain_dims)
            plan = plan_uniform(geo.dims, cfg.domain_dims, grid)
        elif tuple(grid) != (1, 1, 1, 1):
            raise ConfigError("multi-rank runs need a domain decomposition")
    except (DecompositionError, PlanError) as exc:
        raise ConfigError(str(exc))
    if args.gauge:
        try:
            gauge = read_gauge(args.gauge, args.boundary)
        except (GaugeFileError, OSError) as exc:
            raise ConfigError(f"cannot read gauge file: {exc}")
        if gauge.geometry.dims != geo.dims:
            raise ConfigError(f"gauge file has dims {gauge.geometry.dims}, expected {geo.dims}")
    else:
        gauge = _make_gauge(args, geo)
    clover = build_clover(gauge, cfg.params)
    b = Rng(args.rhs_seed).complex_normal((geo.volume, 4, 3))

    t0 = time.perf_counter()
    if plan is not None and plan.n_ranks > 1:
        res = run_multirank(plan, gauge, b, cfg, schedule=args.schedule, clover=clover)
        rank_records = res.ranks
    else:
        res = solve_single(gauge, b, cfg, clover)
        rank_records = None
    elapsed = time.perf_counter() - t0
    st = res.stats
    gflops = st.flop_estimate / elapsed / 1e9 if elapsed > 0 else 0.0
    bound = overheaded_limit()
    fields = dict(
        dims=list(geo.dims), domain=list(cfg.domain_dims) if cfg.domain_dims else None,
        mass=cfg.params.mass, csw=cfg.params.csw, n_schwarz=cfg.schwarz.n_schwarz, n_mr=cfg.schwarz.n_mr,
        storage=cfg.schwarz.storage, restart=cfg.fgmres.restart, deflation=cfg.fgmres.deflation,
        tol=cfg.fgmres.tol, converged=st.converged, iterations=st.iterations, cycles=st.cycles,
        true_residual=st.true_residual, residual_history=st.residual_history,
        precond_applications=st.precond_applications, operator_applications=st.operator_applications,
        flops_per_site=count_flops(cfg.params).total, flops=st.flop_estimate, elapsed_s=elapsed,
        gflops=gflops, model_bound_gflops_per_core=bound, model_efficiency=gflops / bound,
        ranks=res.info.get("ranks", 1), info=res.info,
    )
    if rank_records is not None:
        fields["rank_stats"] = rank_records
    if args.compare_unpreconditioned and cfg.domain_dims is not None:
        plain = solve_single(gauge, b, SolveConfig(cfg.params, None, cfg.schwarz, cfg.fgmres), clover)
        fields["unpreconditioned_iterations"] = plain.stats.iterations
        fields["iteration_ratio"] = st.iterations / max(1, plain.stats.iterations)
    out.text(f"lattice {'x'.join(map(str, geo.dims))}, "
             f"{'domains ' + 'x'.join(map(str, cfg.domain_dims)) if cfg.domain_dims else 'no preconditioner'}, "
             f"{fields['ranks']} rank(s)")
    for i, r in enumerate(st.residual_history):
        out.text(f"  iter {i:4d}  |r|/|b| = {r:.3e}")
    out.text(f"{'converged' if st.converged else 'NOT converged'} after {st.iterations} outer iterations, "
             f"true residual {st.true_residual:.3e}")
    out.text(f"{st.flop_estimate:.3e} flops in {elapsed:.2f} s = {gflops:.3f} Gflop/s "
             f"({gflops / bound:.2%} of the {bound:.1f} Gflop/s single-core model bound)")
    if "unpreconditioned_iterations" in fields:
        out.text(f"unpreconditioned: {fields['unpreconditioned_iterations']} iterations "
                 f"(ratio {fields['iteration_ratio']:.3f})")
    out.record("solve", **fields)
    return EXIT_OK if st.converged else EXIT_NOCONV


def cmd_plan(args, out: Output) -> int:
    try:
        uni = plan_uniform(args.dims, args.domain, args.rank_grid, args.cores)
    except PlanError as exc:
        raise ConfigError(str(exc))
    if uni.n_ranks == 1:
        out.text(f"single rank: load {uni.average_load:.1%}")
        out.record("plan", **uni.as_record())
        return EXIT_OK
    out.text(uni.report())
    out.record("plan", **uni.as_record())
    if args.nonuniform:
        try:
            non = plan_nonuniform(args.dims, args.domain, args.cores, args.nonuniform, args.rank_grid)
        except PlanError as exc:
            raise ConfigError(str(exc))
        cmp = cost_compare(non, uni)
        ax = "xyzt".index(args.nonuniform)
        out.text("")
        out.text(f"non-uniform {args.nonuniform}: {args.dims[ax]} = "
                 f"{' + '.join(map(str, non.chunks[ax]))}")
        out.text(non.report())
        out.text("")
        out.text(f"ranks {uni.n_ranks} -> {non.n_ranks} (ratio {cmp['rank_ratio']:.3f}, "
                 f"cost reduction {cmp['cost_reduction']:.1%}); "
                 f"load {uni.average_load:.1%} -> {non.average_load:.1%}; "
                 f"largest rank surface {cmp['max_surface_sites'][1]} -> {cmp['max_surface_sites'][0]} sites")
        out.record("plan", **non.as_record())
        out.record("compare", **cmp)
    return EXIT_OK


def cmd_schedule(args, out: Output) -> int:
    try:
        sched = build_schedule(args.split, args.domain_grid, variant=args.variant)
    except (ScheduleError, ValueError) as exc:
        raise ConfigError(str(exc))
    costs = args.costs or tuple(20e-6 * len(g) for g in sched.groups)
    if len(costs) != sched.n_groups:
        raise ConfigError(f"--costs needs {sched.n_groups} values")
    violations = validate_schedule(sched)
    out.text(sched.describe())
    out.text(f"violations: {len(violations)}")
    for v in violations:
        out.text(f"  {v}")
    out.record("schedule", **sched.as_record(), violations=violations)
    try:
        tl = simulate_timeline(sched, costs, args.bandwidth, args.latency, args.domain, args.iterations)
    except ValueError as exc:
        raise ConfigError(str(exc))
    out.text(f"timeline: {args.iterations} iterations, makespan {tl.makespan:.3e} s, "
             f"idle {tl.idle:.3e} s (last iteration {tl.steady_idle:.3e} s)")
    if args.gantt:
        out.text(tl.gantt())
    rec = tl.as_record()
    rec.pop("events")
    out.record("timeline", **rec)
    if args.sweep:
        thr = bandwidth_threshold(sched, costs, args.latency, args.domain)
        out.text(f"analytic bandwidth threshold: {thr:.4e} B/s")
        centre = thr if np.isfinite(thr) else args.bandwidth
        for bw in np.geomspace(centre / 4, centre * 4, args.sweep):
            t = simulate_timeline(sched, costs, bw, args.latency, args.domain, args.iterations)
            out.text(f"  bandwidth {bw:.4e} B/s: steady idle {t.steady_idle:.3e} s")
            out.record("sweep", bandwidth=float(bw), steady_idle=t.steady_idle, threshold=thr)
    return EXIT_OK


def cmd_perfmodel(args, out: Output) -> int:
    try:
        chip = ChipModel(cores=args.cores, usable_cores=min(60, args.cores), clock_ghz=args.clock)
        ws = WorkingSetSpec(args.domain, args.n_spinors)
        fuse = FuseSpec(args.domain, args.fuse)
    except (ValueError, LayoutError) as exc:
        raise ConfigError(str(exc))
    rec = model_record(chip, ws, fuse)
    if args.fma_fraction is not None:
        if not 0 <= args.fma_fraction <= 1:
            raise ConfigError("--fma-fraction must lie in [0, 1]")
        rec["fma_fraction"] = args.fma_fraction
        rec["fma_limit"] = (1 + args.fma_fraction) / 2
    f = rec["fma_fraction"] if args.fma_fraction is not None else round(rec["fma_fraction"], 2)
    try:
        factor = args.overhead if args.overhead is not None else rec["overhead_factor"]
        rec["overhead_factor"] = factor
        rec["core_limit_gflops"] = overheaded_limit(chip, f, factor)
    except ValueError as exc:
        raise ConfigError(str(exc))
    peak_core = rec["peak_sp_core_gflops"]
    dims = "x".join(map(str, args.domain))
    out.text(f"peak DP {rec['peak_dp_gflops']:.1f} Gflop/s ({rec['peak_dp_gflops'] / 1000:.1f} TFlop/s), "
             f"SP per core {peak_core:.1f} Gflop/s")
    out.text(f"flops/site {rec['flops_per_site']}, FMA fraction {rec['fma_fraction']:.2f} "
             f"-> limit {rec['fma_limit']:.0%} of peak")
    out.text(f"with overhead factor {rec['overhead_factor']:.3f}: "
             f"{rec['core_limit_gflops'] / peak_core:.0%} of {peak_core:.1f} = "
             f"{rec['core_limit_gflops']:.1f} Gflop/s/core")
    out.text(f"working set per {dims} domain (n_s = {args.n_spinors}): "
             f"{rec['working_set_kb']['all-single']:.0f} kB all single, "
             f"{rec['working_set_kb']['gauge-clover-half']:.0f} kB gauge/clover half")
    util = rec["simd_utilization"]
    out.text("SIMD utilization: " + ", ".join(f"{a} {u:.3f}" for a, u in util.items()))
    out.record("perfmodel", **rec)
    return EXIT_OK


def cmd_oracle(args, out: Output) -> int:
    from .oracles import run_all
    ok = True
    for res in run_all():
        ok &= res.passed
        out.text(f"{'PASS' if res.passed else 'FAIL'}  {res.name}: {res.value:.3e} (tol {res.tol:.0e})")
        out.record("oracle", **res.as_record())
    return EXIT_OK if ok else EXIT_INVARIANT


COMMANDS = {"generate": cmd_generate, "solve": cmd_solve, "plan": cmd_plan,
            "schedule": cmd_schedule, "perfmodel": cmd_perfmodel, "oracle": cmd_oracle}


def main(argv=None, stream=None) -> int:
    ap = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        pre, _ = ap.parse_known_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    out = None
    try:
        if pre.config:
            apply_config(ap, pre.config, pre.command)
        args = ap.parse_args(argv)
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        out = Output(args, stream)
        return COMMANDS[args.command](args, out)
    except SystemExit as exc:
        return int(exc.code or 0)
    except ConfigError as exc:
        code, msg = EXIT_CONFIG, str(exc)
    except (MessageError, DeadlockError, SolverError, DegenerateDrawError) as exc:
        code, msg = EXIT_INVARIANT, str(exc)
    print(f"lqcd-dd: error: {msg}", file=sys.stderr)
    if out is not None:
        out.record("error", message=msg, exit_code=code)
    return code


if __name__ == "__main__":
    sys.exit(main())
