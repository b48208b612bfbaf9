"""Acceptance suite: one test per top-level criterion, each printing an
explicit pass/fail line."""

import math
import re
import time
import warnings
from fractions import Fraction

import numpy as np
import pytest
import sympy

from fevec.bench import (
    emit_for,
    make_bindings,
    random_coefficients,
    roofline_rows,
    run_configuration,
)
from fevec.codegen import Target, emit
from fevec.elements import (
    MAX_QUADRATURE_DEGREE,
    OPERATOR_FORMS,
    integrand_degree,
    monomial_integral,
    operator_spec,
    quadrature_rule,
    reference_cell,
    reference_element,
    tabulate,
)
from fevec.interp import interpret
from fevec.jit import BENCH_FLAGS, Toolchain, VERIFY_FLAGS, compile_and_load
from fevec.kernels import build_local_kernel
from fevec.mesh import build_dof_map, build_mesh
from fevec.reference import assemble_reference
from fevec.transforms import (
    BatchPlan,
    build_global_wrapper,
    main_extent,
    maps_for,
    split_iname,
    tag_simd,
    vectorize_pipeline,
)

CELLS = ("tri", "quad")
DEGREES = (1, 2, 3)
WIDTHS = (1, 4, 8)


class _Outcome:
    def __init__(self, name):
        self.name = name

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        status = "PASS" if exc_type is None else "FAIL"
        print(f"\nACCEPTANCE [{self.name}]: {status}")
        return False


def _bindings(mesh, dm, u, out):
    return make_bindings(mesh, dm, u, out)


def _fem_setup(form, cell, degree, nx=5):
    spec = operator_spec(form, cell, degree)
    rule = quadrature_rule(cell, integrand_degree(spec))
    mesh = build_mesh(cell, nx, nx)
    dm = build_dof_map(mesh, spec.element)
    return spec, rule, mesh, dm


def test_acceptance_oracle_chain():
    """Reference assembler, interpreter, and all compiled targets agree to
    1e-12 relative for every operator/cell/degree/width on a 5x5 mesh."""
    t0 = time.perf_counter()
    toolchain = Toolchain(flags=VERIFY_FLAGS)
    with _Outcome("oracle-chain"):
        for form in OPERATOR_FORMS:
            for cell in CELLS:
                for degree in DEGREES:
                    spec, rule, mesh, dm = _fem_setup(form, cell, degree)
                    local = build_local_kernel(spec, rule)
                    maps = maps_for(spec)
                    wrapper = build_global_wrapper(local, maps)
                    u = random_coefficients(spec, dm, seed=degree)
                    ref = assemble_reference(spec, mesh, dm, rule, u)
                    scale = max(np.abs(ref).max(), 1.0)

                    def check(out, what):
                        err = np.abs(out - ref).max() / scale
                        assert err <= 1e-12, (form, cell, degree, what, err)

                    out_i = np.zeros_like(ref)
                    interpret(wrapper, _bindings(mesh, dm, u, out_i),
                              {"start": 0, "end": mesh.ncells})
                    check(out_i, "interpreter")

                    h = compile_and_load(
                        emit(wrapper, None, Target("scalar")), toolchain)
                    out_s = np.zeros_like(ref)
                    h(0, mesh.ncells, _bindings(mesh, dm, u, out_s))
                    check(out_s, "scalar")

                    for width in WIDTHS:
                        main, rem = vectorize_pipeline(local, maps,
                                                       BatchPlan(width))
                        targets = [Target("pragma-simd", width)]
                        if width * 8 in (16, 32, 64):
                            targets.append(Target("vector-ext", width))
                        for target in targets:
                            h = compile_and_load(emit(main, rem, target),
                                                 toolchain)
                            out = np.zeros_like(ref)
                            h(0, mesh.ncells, _bindings(mesh, dm, u, out))
                            check(out, f"{target.kind}-w{width}")
        elapsed = time.perf_counter() - t0
        assert elapsed < 300.0, f"oracle chain took {elapsed:.0f}s"


def test_acceptance_analytic_integrals():
    """Mass and helmholtz of u = 1 integrate to exactly 1 over the unit
    square; the single-reference-triangle helmholtz P1 residual matches the
    symbolically derived value."""
    with _Outcome("analytic-integrals"):
        for form in ("mass", "helmholtz"):
            for cell in CELLS:
                for degree in DEGREES:
                    spec, rule, mesh, dm = _fem_setup(form, cell, degree, nx=4)
                    wrapper = build_global_wrapper(
                        build_local_kernel(spec, rule), maps_for(spec))
                    u = np.ones(dm.ndofs_global)
                    out = np.zeros(dm.ndofs_global)
                    interpret(wrapper, _bindings(mesh, dm, u, out),
                              {"start": 0, "end": mesh.ncells})
                    assert abs(out.sum() - 1.0) <= 1e-12, (form, cell, degree)

        # symbolic re-derivation of the P1 helmholtz residual for u = Y on
        # the reference triangle: A_j = inner(grad u, grad v_j) + u v_j
        X, Y = sympy.symbols("X Y")
        basis = [1 - X - Y, X, Y]
        u = Y
        expect = []
        for v in basis:
            gu = sympy.Matrix([sympy.diff(u, X), sympy.diff(u, Y)])
            gv = sympy.Matrix([sympy.diff(v, X), sympy.diff(v, Y)])
            integrand = gu.dot(gv) + u * v
            expect.append(sympy.integrate(integrand, (Y, 0, 1 - X), (X, 0, 1)))
        assert expect == [sympy.Rational(-11, 24), sympy.Rational(1, 24),
                          sympy.Rational(7, 12)]

        spec = operator_spec("helmholtz", "tri", 1)
        rule = quadrature_rule("tri", integrand_degree(spec))
        k = build_local_kernel(spec, rule)
        A = np.zeros(3)
        coords = np.array([0.0, 0.0, 1.0, 0.0, 0.0, 1.0])
        interpret(k, {"A": A, "coords": coords,
                      "w_0": np.array([0.0, 0.0, 1.0])})
        assert np.abs(A - np.array([float(e) for e in expect])).max() <= 1e-13


def test_acceptance_transform_bitwise_200_cases():
    """split_iname and tag_simd preserve interpreter output bitwise for 200
    randomized cases, including non-divisible trip counts; the peeled
    remainder covers exactly the leftover range."""
    from fevec.ir import (
        ArrayDecl, IndexVar, Lit, LoopKernel, Read, Statement, Var, add, mul,
    )

    def make_kernel(arity):
        return LoopKernel(
            "rand",
            params=("start", "end"),
            inames=(
                IndexVar("n", (Var("start"),), (Var("end"),)),
                IndexVar("k", (Lit(0),), (Lit(arity),)),
            ),
            arrays=(
                ArrayDecl("out", "argument", "real64", (None,), (1,)),
                ArrayDecl("src", "argument", "real64", (None,), (1,)),
                ArrayDecl("m", "argument", "int32", (None,), (1,)),
                ArrayDecl("t", "temporary", "real64", (arity,), (1,)),
            ),
            stmts=(
                Statement("g", "t", (Var("k"),), "assign",
                          Read("src", (Read("m", (add(mul(arity, Var("n")),
                                                      Var("k")),)),)),
                          frozenset({"n", "k"})),
                Statement("s", "out",
                          (Read("m", (add(mul(arity, Var("n")), Var("k")),)),),
                          "inc", mul(Lit(1.5), Read("t", (Var("k"),))),
                          frozenset({"n", "k"}),
                          depends_on=frozenset({"g"})),
            ),
        )

    rng = np.random.default_rng(2024)
    with _Outcome("transform-bitwise-200"):
        for case in range(200):
            arity = int(rng.integers(1, 6))
            start = int(rng.integers(0, 4)) * (0 if case % 2 else 1)
            ncells = int(rng.integers(start + 1, start + 40))
            factor = int(rng.choice([2, 3, 4, 5, 8]))
            ndofs = int(rng.integers(4, 50))
            k = make_kernel(arity)
            m = rng.integers(0, ndofs, arity * ncells).astype(np.int32)
            src = rng.uniform(-1, 1, ndofs)

            def run(kern, s, e, out):
                interpret(kern, {"out": out, "src": src.copy(), "m": m},
                          {"start": s, "end": e})

            base = np.zeros(ndofs)
            run(k, start, ncells, base)

            # general split: exact for any bounds
            out_g = np.zeros(ndofs)
            run(split_iname(k, "n", factor), start, ncells, out_g)
            assert np.array_equal(out_g, base), case

            # divisible split + simd tag + peeled remainder; the batched
            # form needs a width-aligned start
            width = int(rng.choice([2, 4, 8]))
            astart = start - start % width
            main = tag_simd(
                split_iname(k, "n", width, assume_divisible=True,
                            lane_name="lane"),
                "lane", BatchPlan(width),
            )
            base_a = np.zeros(ndofs)
            run(k, astart, ncells, base_a)
            out_v = np.zeros(ndofs)
            cut = main_extent(astart, ncells, width)
            assert astart <= cut <= ncells
            assert (cut - astart) % width == 0
            assert ncells - cut < width
            run(main, astart, ncells, out_v)
            if cut < ncells:
                run(k, cut, ncells, out_v)
            assert np.array_equal(out_v, base_a), case


def test_acceptance_flop_invariance():
    """The interpreter flop tally is exactly equal between the plain wrapper
    and the vectorized pipeline for every configuration."""
    with _Outcome("flop-invariance"):
        for form in OPERATOR_FORMS:
            for cell in CELLS:
                for degree in DEGREES:
                    spec, rule, mesh, dm = _fem_setup(form, cell, degree, nx=4)
                    local = build_local_kernel(spec, rule)
                    maps = maps_for(spec)
                    wrapper = build_global_wrapper(local, maps)
                    u = random_coefficients(spec, dm, 0)
                    n = spec.element.value_size * dm.ndofs_global

                    def flops(kern):
                        out = np.zeros(n)
                        return interpret(kern, _bindings(mesh, dm, u, out),
                                         {"start": 0, "end": mesh.ncells})

                    base = flops(wrapper)
                    for width in (4, 8):
                        # 4x4 meshes: 16 or 32 cells, divisible by both widths
                        main, _ = vectorize_pipeline(local, maps,
                                                     BatchPlan(width))
                        assert flops(main) == base, (form, cell, degree, width)


def test_acceptance_codegen_structure():
    """Pragma target annotates every lane loop except the scatter; the
    vector-extension target carries the typedef, 64-byte alignment, and
    zero-vector broadcasts; emission is byte-deterministic."""
    with _Outcome("codegen-structure"):
        for form, cell, degree in [("mass", "tri", 1), ("helmholtz", "quad", 2),
                                   ("elasticity", "tri", 2)]:
            spec = operator_spec(form, cell, degree)
            rule = quadrature_rule(cell, integrand_degree(spec))
            local = build_local_kernel(spec, rule)
            main, rem = vectorize_pipeline(local, maps_for(spec), BatchPlan(4))

            src_p = emit(main, rem, Target("pragma-simd", 4)).source
            lines = src_p.splitlines()
            bare = []
            for i, line in enumerate(lines):
                if re.search(r"for \(int n_simd = ", line):
                    if "#pragma omp simd" not in lines[i - 1]:
                        bare.append(i)
            assert len(bare) == 1, form  # exactly one: the scatter
            scatter_body = "".join(lines[bare[0] + 1:bare[0] + 5])
            assert "dat0[" in scatter_body and "+=" in scatter_body

            src_v = emit(main, rem, Target("vector-ext", 4)).source
            assert ("typedef double double4 __attribute__ "
                    "((vector_size (32)));" in src_v)
            for m in re.finditer(r"double4 (\w+)(\[\d+\])?( __attribute__[^;]*)?;",
                                 src_v):
                if m.group(1).startswith("_zeros"):
                    continue
                assert m.group(3) and "aligned (64)" in m.group(3), m.group(0)
            assert "_zeros_double4" in src_v

            assert emit(main, rem, Target("pragma-simd", 4)).source == src_p
            assert emit(main, rem, Target("vector-ext", 4)).source == src_v

        # scalar right-hand side broadcast: mass zero-init of accumulators
        spec = operator_spec("mass", "tri", 1)
        rule = quadrature_rule("tri", integrand_degree(spec))
        main, rem = vectorize_pipeline(build_local_kernel(spec, rule),
                                       maps_for(spec), BatchPlan(4))
        src = emit(main, rem, Target("vector-ext", 4)).source
        assert "= _zeros_double4;" in src


def test_acceptance_basis_quadrature_suite():
    """Partition of unity, gradient-sum-zero, and full monomial exactness
    for every rule degree."""
    with _Outcome("basis-quadrature"):
        for cell in CELLS:
            c = reference_cell(cell)
            for degree in (1, 2, 3, 4):
                elem = reference_element(c, degree)
                rule = quadrature_rule(c, 2 * degree)
                tab = tabulate(elem, rule)
                assert np.abs(tab.values.sum(axis=1) - 1.0).max() < 1e-12
                assert np.abs(tab.grads.sum(axis=1)).max() < 1e-10
            for d in range(0, MAX_QUADRATURE_DEGREE + 1, 3):
                rule = quadrature_rule(c, d)
                assert (rule.weights > 0).all()
                x, y = rule.points[:, 0], rule.points[:, 1]
                if cell == "tri":
                    monos = [(a, b) for a in range(d + 1)
                             for b in range(d + 1 - a)]
                else:
                    monos = [(a, b) for a in range(d + 1) for b in range(d + 1)]
                for a, b in monos:
                    approx = float((rule.weights * x**a * y**b).sum())
                    exact = float(monomial_integral(c, a, b))
                    assert math.isclose(approx, exact, rel_tol=1e-12,
                                        abs_tol=1e-13), (cell, d, a, b)


def test_acceptance_performance_smoke():
    """Informational: helmholtz quad p4 vector-ext at native width should be
    at least 1.5x the scalar baseline; a shortfall warns instead of failing."""
    with _Outcome("performance-smoke (informational)"):
        spec = operator_spec("helmholtz", "quad", 4)
        mesh = build_mesh("quad", 64, 64)
        dm = build_dof_map(mesh, spec.element)
        toolchain = Toolchain(flags=BENCH_FLAGS)
        base = run_configuration(spec, Target("scalar"), mesh, dm, trials=5,
                                 toolchain=toolchain)
        best = 0.0
        for width in (8, 4):
            rec = run_configuration(spec, Target("vector-ext", width), mesh,
                                    dm, trials=5, toolchain=toolchain,
                                    baseline_best=base.time_best_s)
            best = max(best, rec.speedup)
        print(f"\n  helmholtz quad p4 vector-ext best speedup: {best:.2f}x")
        if best < 1.5:
            warnings.warn(
                f"performance smoke test: speedup {best:.2f} < 1.5 "
                "(environment dependent, informational only)"
            )


def test_acceptance_roofline_math():
    """attainable = min(peak, AI * bandwidth); published peak/bandwidth give
    a ridge point of about 8.64 flops/byte."""
    from fevec.bench import BenchmarkRecord

    def rec(ai):
        return BenchmarkRecord("mass", "tri", 1, "scalar", 1, 1, 1, 1.0, 1.0,
                               1, 1.0, ai, 1.0, "", 0)

    with _Outcome("roofline-math"):
        ridge, rows = roofline_rows([rec(2.0), rec(20.0)],
                                    peak_gflops=100.0, bandwidth_gbs=10.0)
        assert ridge == 10.0
        assert rows[0]["attainable_gflops"] == 20.0
        assert rows[1]["attainable_gflops"] == 100.0
        ridge, _ = roofline_rows([rec(1.0)], 332.8, 38.5)
        assert abs(ridge - 8.64) < 0.01
