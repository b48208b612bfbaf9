"""Verification and benchmarking harness for generated assembly kernels."""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass

import numpy as np

from .codegen import Target, emit
from .elements import OperatorSpec, integrand_degree, quadrature_rule
from .interp import count_flops
from .jit import BENCH_FLAGS, Toolchain, compile_and_load
from .kernels import build_local_kernel
from .mesh import DofMap, Mesh, build_dof_map, build_mesh
from .reference import assemble_reference
from .transforms import BatchPlan, build_global_wrapper, maps_for, vectorize_pipeline

__all__ = [
    "BenchmarkRecord",
    "CSV_COLUMNS",
    "VerificationError",
    "DEFAULT_PEAK_GFLOPS",
    "DEFAULT_BANDWIDTH_GBS",
    "emit_for",
    "make_bindings",
    "random_coefficients",
    "flops_per_cell",
    "bytes_per_cell",
    "arithmetic_intensity",
    "verify_target",
    "run_configuration",
    "write_csv",
    "roofline_rows",
]

CSV_COLUMNS = (
    "operator", "cell", "degree", "target", "width", "ncells", "trials",
    "time_best_s", "time_mean_s", "flops_per_cell", "gflops", "ai",
    "speedup", "flags", "seed",
)

# roofline model defaults (per-core peak and measured stream bandwidth of the
# machine the published numbers were taken on)
DEFAULT_PEAK_GFLOPS = 332.8
DEFAULT_BANDWIDTH_GBS = 38.5


class VerificationError(Exception):
    pass


@dataclass(frozen=True)
class BenchmarkRecord:
    operator: str
    cell: str
    degree: int
    target: str
    width: int
    ncells: int
    trials: int
    time_best_s: float
    time_mean_s: float
    flops_per_cell: int
    gflops: float
    ai: float
    speedup: float
    flags: str
    seed: int

    def row(self) -> list:
        return [getattr(self, c) for c in CSV_COLUMNS]


# ---------------------------------------------------------------------------
# Kernel construction per target
# ---------------------------------------------------------------------------


def emit_for(spec: OperatorSpec, target: Target, rule=None):
    """Emitted C for (operator, target): the plain wrapper for scalar, the
    batched main kernel plus peeled remainder otherwise."""
    if rule is None:
        rule = quadrature_rule(spec.cell, integrand_degree(spec))
    local = build_local_kernel(spec, rule)
    maps = maps_for(spec)
    if target.kind == "scalar":
        return emit(build_global_wrapper(local, maps), None, target)
    main, rem = vectorize_pipeline(local, maps, BatchPlan(target.width))
    return emit(main, rem, target)


def make_bindings(mesh: Mesh, dofmap: DofMap, u, out) -> dict:
    return {
        "dat0": out,
        "dat1": np.ascontiguousarray(mesh.coords, dtype=np.float64).ravel(),
        "dat2": np.ascontiguousarray(u, dtype=np.float64),
        "map0": np.ascontiguousarray(dofmap.cell2dof, dtype=np.int32).ravel(),
        "map1": np.ascontiguousarray(mesh.cell2vert, dtype=np.int32).ravel(),
    }


def random_coefficients(spec: OperatorSpec, dofmap: DofMap, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    n = spec.element.value_size * dofmap.ndofs_global
    return rng.uniform(-1.0, 1.0, n)


def flops_per_cell(spec: OperatorSpec, rule=None) -> int:
    """Flops one cell costs in the generated wrapper (interpreter tally over
    a single-cell run, gather/zero/scatter included)."""
    if rule is None:
        rule = quadrature_rule(spec.cell, integrand_degree(spec))
    local = build_local_kernel(spec, rule)
    wrapper = build_global_wrapper(local, maps_for(spec))
    mesh = build_mesh(spec.cell.kind, 1, 1)
    dm = build_dof_map(mesh, spec.element)
    u = random_coefficients(spec, dm, 0)
    out = np.zeros_like(assemble_reference(spec, mesh, dm, rule, u))
    fc = count_flops(wrapper, make_bindings(mesh, dm, u, out),
                     {"start": 0, "end": 1})
    return fc.total


def bytes_per_cell(spec: OperatorSpec, mesh: Mesh, dofmap: DofMap) -> float:
    """Bytes moved per cell assuming perfect caching: every global value
    crosses the memory bus once (coefficient and coordinate reads, output
    read+write, int32 map entries)."""
    vs = spec.element.value_size
    nglobal = vs * dofmap.ndofs_global
    total = 8.0 * (2 * mesh.nvertices + nglobal + 2 * nglobal)
    total += 4.0 * (dofmap.cell2dof.size + mesh.cell2vert.size)
    return total / mesh.ncells


def arithmetic_intensity(spec: OperatorSpec, mesh: Mesh, dofmap: DofMap,
                         rule=None) -> float:
    return flops_per_cell(spec, rule) / bytes_per_cell(spec, mesh, dofmap)


# ---------------------------------------------------------------------------
# Verification and timing
# ---------------------------------------------------------------------------


def _rel_err(out, ref) -> float:
    scale = max(float(np.abs(ref).max()), 1.0)
    return float(np.abs(out - ref).max()) / scale


def verify_target(spec, target, mesh, dofmap, rule, handle, u, rtol) -> float:
    """Run the compiled kernel once against the numpy oracle."""
    ref = assemble_reference(spec, mesh, dofmap, rule, u)
    out = np.zeros_like(ref)
    handle(0, mesh.ncells, make_bindings(mesh, dofmap, u, out))
    err = _rel_err(out, ref)
    if err > rtol:
        raise VerificationError(
            f"{spec.form} {spec.cell.kind} p{spec.element.degree} "
            f"{target.kind} w{target.width}: relative error {err:.3e} "
            f"exceeds {rtol:.1e}"
        )
    return err


def run_configuration(
    spec: OperatorSpec,
    target: Target,
    mesh: Mesh,
    dofmap: DofMap,
    trials: int = 5,
    seed: int = 0,
    toolchain: Toolchain = None,
    baseline_best: float = None,
    verify_rtol: float = None,
    skip_verify: bool = False,
) -> BenchmarkRecord:
    """Compile, verify against the numpy oracle, then time ``trials`` full
    sweeps over the mesh and report the best and mean wall time."""
    if toolchain is None:
        toolchain = Toolchain(flags=BENCH_FLAGS)
    if verify_rtol is None:
        verify_rtol = 1e-9 if "-ffast-math" in toolchain.flags else 1e-12
    rule = quadrature_rule(spec.cell, integrand_degree(spec))
    unit = emit_for(spec, target, rule)
    handle = compile_and_load(unit, toolchain)

    u = random_coefficients(spec, dofmap, seed)
    if not skip_verify:
        verify_target(spec, target, mesh, dofmap, rule, handle, u, verify_rtol)

    n = spec.element.value_size * dofmap.ndofs_global
    out = np.zeros(n)
    bindings = make_bindings(mesh, dofmap, u, out)
    times = []
    for _ in range(max(1, trials)):
        out[:] = 0.0
        t0 = time.perf_counter()
        handle(0, mesh.ncells, bindings)
        times.append(time.perf_counter() - t0)
    best, mean = min(times), sum(times) / len(times)

    fpc = flops_per_cell(spec, rule)
    gflops = fpc * mesh.ncells / best / 1e9
    ai = fpc / bytes_per_cell(spec, mesh, dofmap)
    speedup = (baseline_best / best) if baseline_best else 1.0
    return BenchmarkRecord(
        operator=spec.form,
        cell=spec.cell.kind,
        degree=spec.element.degree,
        target=target.kind,
        width=target.width,
        ncells=mesh.ncells,
        trials=max(1, trials),
        time_best_s=best,
        time_mean_s=mean,
        flops_per_cell=fpc,
        gflops=gflops,
        ai=ai,
        speedup=speedup,
        flags=" ".join(toolchain.flags),
        seed=seed,
    )


def write_csv(records, fileobj) -> None:
    w = csv.writer(fileobj)
    w.writerow(CSV_COLUMNS)
    for r in records:
        w.writerow(r.row())


def roofline_rows(
    records,
    peak_gflops: float = DEFAULT_PEAK_GFLOPS,
    bandwidth_gbs: float = DEFAULT_BANDWIDTH_GBS,
):
    """Per-record attainable performance under the roofline model, plus the
    ridge point (flops/byte where the model turns compute bound)."""
    ridge = peak_gflops / bandwidth_gbs
    rows = []
    for r in records:
        attainable = min(peak_gflops, r.ai * bandwidth_gbs)
        rows.append(
            {
                "operator": r.operator,
                "cell": r.cell,
                "degree": r.degree,
                "target": r.target,
                "width": r.width,
                "ai": r.ai,
                "gflops": r.gflops,
                "attainable_gflops": attainable,
                "fraction_of_attainable": r.gflops / attainable,
                "memory_bound": r.ai < ridge,
            }
        )
    return ridge, rows
