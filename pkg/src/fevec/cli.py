"""Command-line interface: generate | verify | bench | report."""

from __future__ import annotations

import argparse
import os
import sys
try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib

import numpy as np

from .bench import (
    DEFAULT_BANDWIDTH_GBS,
    DEFAULT_PEAK_GFLOPS,
    VerificationError,
    emit_for,
    make_bindings,
    random_coefficients,
    roofline_rows,
    run_configuration,
    write_csv,
)
from .codegen import Target, emit
from .elements import (
    OPERATOR_FORMS,
    integrand_degree,
    operator_spec,
    quadrature_rule,
)
from .interp import interpret
from .ir import Lit, Var, sub, substitute
from .ir_text import dump_kernel
from .jit import BENCH_FLAGS, VERIFY_FLAGS, Toolchain, ToolchainError, compile_and_load
from .kernels import build_local_kernel
from .mesh import build_dof_map, build_mesh
from .reference import assemble_reference
from .transforms import (
    BatchPlan,
    build_global_wrapper,
    main_extent,
    maps_for,
    vectorize_pipeline,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VERIFY = 2
EXIT_TOOLCHAIN = 3

_CELLS = ("tri", "quad")
_TARGETS = ("scalar", "pragma-simd", "vector-ext")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _csv_list(cast):
    def parse(s):
        return [cast(v) for v in s.split(",") if v]

    return parse


def _build_parser() -> _Parser:
    p = _Parser(prog="fevec", description=__doc__)
    p.add_argument("--config", help="TOML file with per-subcommand defaults; "
                                    "explicit flags win")
    sub_ = p.add_subparsers(dest="command", metavar="command")

    def common(sp):
        sp.add_argument("--operator", type=_csv_list(str), default=["helmholtz"],
                        help=f"comma list from {{{', '.join(OPERATOR_FORMS)}}}")
        sp.add_argument("--cell", type=_csv_list(str), default=["tri"],
                        help="comma list from {tri, quad}")
        sp.add_argument("--degree", type=_csv_list(int), default=[1],
                        help="comma list of polynomial degrees")
        sp.add_argument("--width", type=_csv_list(int), default=[4],
                        help="comma list of batch widths")
        sp.add_argument("--mesh", type=int, default=5,
                        help="cells per direction of the unit-square mesh")
        sp.add_argument("--seed", type=int, default=0)

    g = sub_.add_parser("generate", help="emit C source (and IR dump) for "
                                         "configurations")
    common(g)
    g.add_argument("--target", type=_csv_list(str), default=["vector-ext"],
                   help="comma list from {scalar, pragma-simd, vector-ext}")
    g.add_argument("--outdir", default=".", help="directory for emitted files")
    g.add_argument("--dump-ir", action="store_true",
                   help="also write the textual IR of each kernel")

    v = sub_.add_parser("verify", help="run the oracle chain over a sweep")
    common(v)
    v.set_defaults(operator=list(OPERATOR_FORMS), cell=["tri", "quad"],
                   degree=[1, 2, 3], width=[1, 4, 8])
    v.add_argument("--interpret-only", action="store_true",
                   help="skip compilation; check interpreter stages only")
    v.add_argument("--rtol", type=float, default=1e-12)
    v.add_argument("--inject-fault", action="store_true",
                   help=argparse.SUPPRESS)  # test hook: perturb a scatter index

    b = sub_.add_parser("bench", help="time configurations and write a CSV")
    common(b)
    b.add_argument("--target", type=_csv_list(str),
                   default=["scalar", "pragma-simd", "vector-ext"])
    b.add_argument("--trials", type=int, default=5)
    b.add_argument("--output", default="bench.csv")
    b.add_argument("--force", action="store_true",
                   help="benchmark even if verification fails")
    b.add_argument("--cc-flags", default=" ".join(BENCH_FLAGS))

    r = sub_.add_parser("report", help="roofline analysis of bench CSVs")
    r.add_argument("csv", nargs="+", help="bench CSV files")
    r.add_argument("--peak", type=float, default=DEFAULT_PEAK_GFLOPS,
                   help="single-core peak GFLOP/s")
    r.add_argument("--bandwidth", type=float, default=DEFAULT_BANDWIDTH_GBS,
                   help="memory bandwidth GB/s")
    return p


def _apply_config(parser: _Parser, argv: list) -> list:
    """Load TOML defaults (global table plus per-subcommand tables)."""
    if "--config" not in argv:
        return argv
    i = argv.index("--config")
    try:
        path = argv[i + 1]
    except IndexError:
        parser.error("--config needs a file argument")
    try:
        with open(path, "rb") as f:
            cfg = tomllib.load(f)
    except (OSError, tomllib.TOMLDecodeError) as e:
        parser.error(f"cannot read config {path!r}: {e}")
    command = next((a for a in argv if not a.startswith("-") and a != path), None)
    merged = {k: v for k, v in cfg.items() if not isinstance(v, dict)}
    if command and isinstance(cfg.get(command), dict):
        merged.update(cfg[command])
    extra = []
    for k, v in merged.items():
        flag = "--" + k.replace("_", "-")
        if flag in argv:
            continue  # explicit flags win
        if isinstance(v, bool):
            if v:
                extra.append(flag)
        elif isinstance(v, list):
            extra.extend([flag, ",".join(str(x) for x in v)])
        else:
            extra.extend([flag, str(v)])
    # defaults go right after the subcommand, before explicit flags
    if command:
        j = argv.index(command)
        return argv[: j + 1] + extra + argv[j + 1 :]
    return argv + extra


def _targets_for_width(width: int, requested=None):
    """Targets valid at a batch width (vector-ext needs a power-of-two
    vector size of 16/32/64 bytes, so width 1 falls back to scalar+pragma)."""
    kinds = requested or list(_TARGETS)
    out = []
    for kind in kinds:
        if kind == "scalar":
            out.append(Target("scalar"))
        elif kind == "vector-ext" and width * 8 not in (16, 32, 64):
            continue
        else:
            out.append(Target(kind, width))
    return out


def _inject_scatter_fault(kernel):
    """Test hook: mirror the scatter's node index, corrupting dof placement
    while staying in bounds."""
    for st in reversed(kernel.stmts):
        if st.mode == "inc" and kernel.array(st.lhs_array).kind == "argument":
            node_iname = next(
                n for n in ("i_s",) if n in st.within
            )
            arity = kernel.iname(node_iname).upper[0].value
            repl = {node_iname: sub(Lit(arity - 1), Var(node_iname))}
            new = st.__class__(
                st.id, st.lhs_array,
                tuple(substitute(e, repl) for e in st.lhs_index),
                st.mode, st.rhs, st.within, st.depends_on, st.seq_lane,
            )
            stmts = tuple(new if s.id == st.id else s for s in kernel.stmts)
            return kernel.__class__(kernel.name, kernel.params, kernel.inames,
                                    kernel.arrays, stmts)
    raise ValueError("no scatter statement found")


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_generate(args) -> int:
    os.makedirs(args.outdir, exist_ok=True)
    for form in args.operator:
        for cell in args.cell:
            for degree in args.degree:
                for kind in args.target:
                    widths = args.width if kind != "scalar" else [1]
                    for w in widths:
                        spec = operator_spec(form, cell, degree)
                        target = Target(kind, w if kind != "scalar" else 1)
                        unit = emit_for(spec, target)
                        stem = f"{form}_{cell}_p{degree}_{kind}_w{target.width}"
                        path = os.path.join(args.outdir, stem + ".c")
                        with open(path, "w") as f:
                            f.write(unit.source)
                        print(path)
                        if args.dump_ir:
                            rule = quadrature_rule(cell, integrand_degree(spec))
                            local = build_local_kernel(spec, rule)
                            maps = maps_for(spec)
                            if kind == "scalar":
                                kern = build_global_wrapper(local, maps)
                            else:
                                kern, _ = vectorize_pipeline(
                                    local, maps, BatchPlan(target.width)
                                )
                            ir_path = os.path.join(args.outdir, stem + ".ir")
                            with open(ir_path, "w") as f:
                                f.write(dump_kernel(kern))
                            print(ir_path)
    return EXIT_OK


def _verify_one(form, cell, degree, width, args, toolchain) -> None:
    spec = operator_spec(form, cell, degree)
    rule = quadrature_rule(cell, integrand_degree(spec))
    local = build_local_kernel(spec, rule)
    maps = maps_for(spec)
    wrapper = build_global_wrapper(local, maps)
    mesh = build_mesh(cell, args.mesh, args.mesh)
    dm = build_dof_map(mesh, spec.element)
    u = random_coefficients(spec, dm, args.seed)
    ref = assemble_reference(spec, mesh, dm, rule, u)
    scale = max(float(np.abs(ref).max()), 1.0)
    label = f"{form} {cell} p{degree} w{width}"

    def check(stage, out):
        err = float(np.abs(out - ref).max()) / scale
        print(f"  {label} {stage}: max rel err {err:.3e}")
        if err > args.rtol:
            raise VerificationError(
                f"{label}: stage {stage!r} error {err:.3e} exceeds {args.rtol:.1e}"
            )

    def run_interp(kern, start, end, out):
        interpret(kern, make_bindings(mesh, dm, u, out), {"start": start, "end": end})

    main, rem = vectorize_pipeline(local, maps, BatchPlan(width))
    if args.inject_fault:
        wrapper = _inject_scatter_fault(wrapper)
        main = _inject_scatter_fault(main)

    out = np.zeros_like(ref)
    run_interp(wrapper, 0, mesh.ncells, out)
    check("interpret(wrapper)", out)

    out_v = np.zeros_like(ref)
    cut = main_extent(0, mesh.ncells, width)
    run_interp(main, 0, mesh.ncells, out_v)
    if cut < mesh.ncells:
        run_interp(rem, cut, mesh.ncells, out_v)
    check(f"interpret(batched w{width})", out_v)
    if not np.array_equal(out_v, out):
        raise VerificationError(f"{label}: batched interpreter result not bitwise "
                                "equal to the plain wrapper")

    if args.interpret_only:
        return

    faulty = {"wrapper": wrapper, "main": main}
    scalar_out = None
    for target in _targets_for_width(width):
        if target.kind == "scalar":
            unit = emit(faulty["wrapper"], None, target)
        else:
            unit = emit(faulty["main"], rem, target)
        handle = compile_and_load(unit, toolchain)
        out_c = np.zeros_like(ref)
        handle(0, mesh.ncells, make_bindings(mesh, dm, u, out_c))
        check(f"compiled({target.kind}, w{target.width})", out_c)
        if target.kind == "scalar":
            scalar_out = out_c
        elif scalar_out is not None and not np.array_equal(out_c, scalar_out):
            raise VerificationError(
                f"{label}: compiled {target.kind} not bitwise equal to the "
                "compiled scalar target"
            )


def cmd_verify(args) -> int:
    toolchain = Toolchain(flags=VERIFY_FLAGS)
    n = 0
    for form in args.operator:
        for cell in args.cell:
            for degree in args.degree:
                for width in args.width:
                    _verify_one(form, cell, degree, width, args, toolchain)
                    n += 1
    print(f"verify: {n} configurations passed")
    return EXIT_OK


def cmd_bench(args) -> int:
    toolchain = Toolchain(flags=tuple(args.cc_flags.split()))
    records = []
    for form in args.operator:
        for cell in args.cell:
            for degree in args.degree:
                spec = operator_spec(form, cell, degree)
                mesh = build_mesh(cell, args.mesh, args.mesh)
                dm = build_dof_map(mesh, spec.element)
                baseline = None
                for width in args.width:
                    for target in _targets_for_width(width, args.target):
                        if target.kind == "scalar" and baseline is not None:
                            continue  # one scalar baseline per configuration
                        rec = run_configuration(
                            spec, target, mesh, dm,
                            trials=args.trials, seed=args.seed,
                            toolchain=toolchain, baseline_best=baseline,
                            skip_verify=args.force,
                        )
                        if target.kind == "scalar":
                            baseline = rec.time_best_s
                            rec = rec.__class__(**{**rec.__dict__, "speedup": 1.0})
                        records.append(rec)
                        print(f"  {rec.operator} {rec.cell} p{rec.degree} "
                              f"{rec.target} w{rec.width}: "
                              f"{rec.gflops:.2f} GFLOP/s, x{rec.speedup:.2f}")
    with open(args.output, "w", newline="") as f:
        write_csv(records, f)
    print(f"wrote {len(records)} records to {args.output}")
    return EXIT_OK


def cmd_report(args) -> int:
    import csv as _csv
    from .bench import BenchmarkRecord

    records = []
    for path in args.csv:
        with open(path, newline="") as f:
            for row in _csv.DictReader(f):
                records.append(
                    BenchmarkRecord(
                        operator=row["operator"], cell=row["cell"],
                        degree=int(row["degree"]), target=row["target"],
                        width=int(row["width"]), ncells=int(row["ncells"]),
                        trials=int(row["trials"]),
                        time_best_s=float(row["time_best_s"]),
                        time_mean_s=float(row["time_mean_s"]),
                        flops_per_cell=int(row["flops_per_cell"]),
                        gflops=float(row["gflops"]), ai=float(row["ai"]),
                        speedup=float(row["speedup"]), flags=row["flags"],
                        seed=int(row["seed"]),
                    )
                )
    if not records:
        print("report: no records", file=sys.stderr)
        return EXIT_USAGE
    ridge, rows = roofline_rows(records, args.peak, args.bandwidth)
    print(f"# peak {args.peak} GFLOP/s, bandwidth {args.bandwidth} GB/s, "
          f"ridge point {ridge:.2f} flops/byte")
    header = ("operator", "cell", "degree", "target", "width", "ai",
              "gflops", "attainable_gflops", "fraction_of_attainable",
              "memory_bound")
    print(",".join(header))
    for r in rows:
        print(",".join(
            f"{r[k]:.4g}" if isinstance(r[k], float) else str(r[k])
            for k in header
        ))
    return EXIT_OK


def main(argv=None) -> int:
    parser = _build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    argv = _apply_config(parser, argv)
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help(sys.stderr)
        return EXIT_USAGE

    try:
        if args.command == "generate":
            return cmd_generate(args)
        if args.command == "verify":
            return cmd_verify(args)
        if args.command == "bench":
            return cmd_bench(args)
        return cmd_report(args)
    except ToolchainError as e:
        print(f"fevec: toolchain failure: {e}", file=sys.stderr)
        return EXIT_TOOLCHAIN
    except VerificationError as e:
        print(f"fevec: verification failure: {e}", file=sys.stderr)
        return EXIT_VERIFY
    except ValueError as e:
        print(f"fevec: error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
