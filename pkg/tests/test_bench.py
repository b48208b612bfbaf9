"""Benchmark harness: CSV schema, roofline math, timing plumbing."""

import io

import numpy as np
import pytest

from fevec.bench import (
    CSV_COLUMNS,
    BenchmarkRecord,
    VerificationError,
    arithmetic_intensity,
    bytes_per_cell,
    flops_per_cell,
    roofline_rows,
    run_configuration,
    verify_target,
    write_csv,
)
from fevec.codegen import Target
from fevec.elements import integrand_degree, operator_spec, quadrature_rule
from fevec.jit import Toolchain, VERIFY_FLAGS
from fevec.mesh import build_dof_map, build_mesh


def record(**kw):
    base = dict(
        operator="mass", cell="triangle", degree=1, target="scalar", width=1,
        ncells=50, trials=5, time_best_s=1e-3, time_mean_s=1.1e-3,
        flops_per_cell=100, gflops=5.0, ai=1.0, speedup=1.0,
        flags="-O2", seed=0,
    )
    base.update(kw)
    return BenchmarkRecord(**base)


def test_csv_schema_and_row_order():
    buf = io.StringIO()
    write_csv([record(), record(degree=2)], buf)
    lines = buf.getvalue().strip().splitlines()
    assert lines[0] == ",".join(CSV_COLUMNS)
    assert len(lines) == 3
    assert lines[1].split(",")[:5] == ["mass", "triangle", "1", "scalar", "1"]


def test_roofline_hand_values():
    peak, bw = 100.0, 10.0  # ridge at 10 flops/byte
    ridge, rows = roofline_rows(
        [record(ai=20.0, gflops=50.0), record(ai=5.0, gflops=30.0)],
        peak_gflops=peak, bandwidth_gbs=bw,
    )
    assert ridge == 10.0
    above, below = rows
    assert above["attainable_gflops"] == 100.0  # compute bound: min(peak, .)
    assert not above["memory_bound"]
    assert below["attainable_gflops"] == 50.0   # 5 flops/byte * 10 GB/s
    assert below["memory_bound"]
    assert below["fraction_of_attainable"] == pytest.approx(0.6)


def test_roofline_half_ridge_gives_half_peak():
    ridge, rows = roofline_rows([record(ai=332.8 / 38.5 / 2)],
                                peak_gflops=332.8, bandwidth_gbs=38.5)
    assert ridge == pytest.approx(332.8 / 38.5)
    assert ridge == pytest.approx(8.64, abs=0.01)
    assert rows[0]["attainable_gflops"] == pytest.approx(332.8 / 2, rel=1e-12)


def test_flops_per_cell_and_ai_positive():
    spec = operator_spec("helmholtz", "tri", 2)
    fpc = flops_per_cell(spec)
    assert fpc > 0
    mesh = build_mesh("tri", 4, 4)
    dm = build_dof_map(mesh, spec.element)
    bpc = bytes_per_cell(spec, mesh, dm)
    assert bpc > 0
    assert arithmetic_intensity(spec, mesh, dm) == pytest.approx(fpc / bpc)


def test_run_configuration_produces_consistent_record():
    spec = operator_spec("mass", "quad", 1)
    mesh = build_mesh("quad", 6, 6)
    dm = build_dof_map(mesh, spec.element)
    tc = Toolchain(flags=VERIFY_FLAGS)
    rec = run_configuration(spec, Target("scalar"), mesh, dm, trials=2,
                            seed=3, toolchain=tc)
    assert rec.operator == "mass" and rec.ncells == 36 and rec.seed == 3
    assert rec.time_best_s <= rec.time_mean_s
    assert rec.gflops == pytest.approx(
        rec.flops_per_cell * rec.ncells / rec.time_best_s / 1e9)
    assert rec.flags == " ".join(VERIFY_FLAGS)
    assert rec.speedup == 1.0


def test_verify_target_raises_on_bad_output():
    spec = operator_spec("mass", "tri", 1)
    rule = quadrature_rule("tri", integrand_degree(spec))
    mesh = build_mesh("tri", 3, 3)
    dm = build_dof_map(mesh, spec.element)

    def broken_handle(start, end, bindings):
        bindings["dat0"][...] = 42.0

    u = np.ones(dm.ndofs_global)
    with pytest.raises(VerificationError, match="relative error"):
        verify_target(spec, Target("scalar"), mesh, dm, rule,
                      broken_handle, u, 1e-12)
