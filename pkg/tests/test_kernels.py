"""Local assembly kernels checked against symbolic integration."""

from fractions import Fraction

import numpy as np
import pytest
import sympy

from fevec.elements import integrand_degree, operator_spec, quadrature_rule
from fevec.interp import interpret
from fevec.ir import validate
from fevec.kernels import build_local_kernel

REF_TRI = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
REF_QUAD = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])

ALL_CONFIGS = [
    (form, cell, deg)
    for form in ("mass", "helmholtz", "laplacian", "elasticity")
    for cell in ("tri", "quad")
    for deg in (1, 2, 3)
]


def run_local(form, cell, degree, coords, w):
    spec = operator_spec(form, cell, degree)
    rule = quadrature_rule(cell, integrand_degree(spec))
    k = build_local_kernel(spec, rule)
    assert validate(k) == []
    A = np.zeros(spec.element.ndof)
    interpret(k, {"A": A, "coords": np.asarray(coords, float).ravel(),
                  "w_0": np.asarray(w, float)})
    return spec, A


def sympy_residual(form, cell, degree, coords, w):
    """Independent oracle: assemble the residual on one physical cell with
    exact symbolic integration of the mapped basis."""
    from fevec.elements import lagrange_nodes, reference_cell, reference_element

    X, Y = sympy.symbols("X Y")
    c = reference_cell(cell)
    elem = reference_element(c, degree)
    # symbolic scalar basis on the reference cell
    exps = elem.exponents
    nodes = lagrange_nodes(c, degree)
    V = sympy.Matrix([[sympy.Rational(x) ** a * sympy.Rational(y) ** b
                       for (a, b) in exps] for x, y in nodes])
    C = V.inv()
    basis = [sum(C[m, i] * X**a * Y**b for m, (a, b) in enumerate(exps))
             for i in range(len(nodes))]
    geo_nodes = lagrange_nodes(c, 1)
    Vg = sympy.Matrix([[sympy.Rational(x) ** a * sympy.Rational(y) ** b
                        for (a, b) in [(0, 0), (1, 0), (0, 1), (1, 1)][: len(geo_nodes)]]
                       for x, y in geo_nodes])
    gexp = [(0, 0), (1, 0), (0, 1), (1, 1)][: len(geo_nodes)]
    Cg = Vg.inv()
    gbasis = [sum(Cg[m, i] * X**a * Y**b for m, (a, b) in enumerate(gexp))
              for i in range(len(geo_nodes))]
    coords = sympy.Matrix([[sympy.Rational(v) for v in row] for row in coords])
    xmap = sum(coords[v, 0] * gbasis[v] for v in range(len(gbasis)))
    ymap = sum(coords[v, 1] * gbasis[v] for v in range(len(gbasis)))
    J = sympy.Matrix([[sympy.diff(xmap, X), sympy.diff(xmap, Y)],
                      [sympy.diff(ymap, X), sympy.diff(ymap, Y)]])
    detJ = J.det()
    Jinv = J.inv()

    def grad_phys(f):
        gref = sympy.Matrix([sympy.diff(f, X), sympy.diff(f, Y)])
        return Jinv.T * gref

    def integrate(f):
        f = sympy.expand(f)
        if cell == "tri":
            return sympy.integrate(f, (Y, 0, 1 - X), (X, 0, 1))
        return sympy.integrate(f, (Y, 0, 1), (X, 0, 1))

    vs = 2 if form in ("laplacian", "elasticity") else 1
    w = [sympy.Rational(v) for v in w]
    if vs == 1:
        u = sum(w[i] * basis[i] for i in range(len(basis)))
        out = []
        for j in range(len(basis)):
            if form == "mass":
                integrand = u * basis[j]
            else:
                gu, gv = grad_phys(u), grad_phys(basis[j])
                integrand = gu.dot(gv) + u * basis[j]
            out.append(integrate(integrand * abs(detJ)))
        return [float(v) for v in out]
    uc = [sum(w[2 * i + d] * basis[i] for i in range(len(basis)))
          for d in range(2)]
    gu = [grad_phys(u) for u in uc]  # gu[d][a] = du_d/dx_a
    out = []
    for j in range(len(basis)):
        gv = grad_phys(basis[j])
        for d in range(2):
            if form == "laplacian":
                integrand = gu[d].dot(gv)
            else:
                eps = lambda a, b: (gu[a][b] + gu[b][a]) / 2
                integrand = sum(eps(d, a) * gv[a] for a in range(2))
            out.append(integrate(integrand * abs(detJ)))
    return [float(v) for v in out]


def test_mass_p1_reference_triangle_uniform():
    _, A = run_local("mass", "tri", 1, REF_TRI, np.ones(3))
    assert np.abs(A - 1.0 / 6.0).max() < 1e-14


def test_helmholtz_p1_reference_triangle_linear_coefficient():
    # u = y on the reference triangle
    _, A = run_local("helmholtz", "tri", 1, REF_TRI, [0.0, 0.0, 1.0])
    expect = np.array([-11.0 / 24.0, 1.0 / 24.0, 7.0 / 12.0])
    assert np.abs(A - expect).max() < 1e-13


def test_helmholtz_p1_symbolic_rederivation():
    got = sympy_residual("helmholtz", "tri", 1, REF_TRI.tolist(),
                         [0, 0, 1])
    expect = [float(Fraction(-11, 24)), float(Fraction(1, 24)),
              float(Fraction(7, 12))]
    assert np.abs(np.array(got) - np.array(expect)).max() < 1e-15


@pytest.mark.parametrize("form", ["mass", "helmholtz", "laplacian", "elasticity"])
@pytest.mark.parametrize("cell", ["tri", "quad"])
def test_local_kernel_matches_symbolic_oracle(form, cell):
    rng = np.random.default_rng(hash((form, cell)) % 2**32)
    if cell == "tri":
        # any triangle maps affinely, so quadrature is exact
        coords = REF_TRI + np.round(rng.uniform(-0.2, 0.2, (3, 2)) * 16) / 16
    else:
        # a sheared parallelogram: the bilinear map degenerates to affine
        v00 = np.array([0.0, 0.0])
        v10 = np.array([1.0, 0.125])
        v01 = np.array([0.25, 1.0])
        coords = np.array([v00, v10, v01, v10 + v01 - v00])
    degree = 2 if cell == "tri" else 1
    spec = operator_spec(form, cell, degree)
    w = np.round(rng.uniform(-1, 1, spec.element.ndof) * 8) / 8
    _, A = run_local(form, cell, degree, coords, w)
    expect = sympy_residual(form, cell, degree, coords.tolist(), w.tolist())
    assert np.abs(A - np.array(expect)).max() < 1e-12


def test_distorted_quad_converges_to_adaptive_integration():
    """On a genuinely bilinear cell the gradient integrand is rational, so a
    fixed rule is approximate; a high-degree rule must agree closely with an
    independent adaptive integrator."""
    from scipy.integrate import dblquad

    coords = np.array([[0.0, 0.0], [1.0, 0.1], [-0.1, 1.0], [1.1, 1.2]])
    w = np.array([0.5, -0.25, 1.0, 0.75])
    spec = operator_spec("helmholtz", "quad", 1)
    rule = quadrature_rule("quad", 18)
    k = build_local_kernel(spec, rule)
    A = np.zeros(4)
    interpret(k, {"A": A, "coords": coords.ravel().copy(), "w_0": w.copy()})

    def basis(X, Y):
        return np.array([(1 - X) * (1 - Y), X * (1 - Y), (1 - X) * Y, X * Y])

    def dbasis(X, Y):
        return np.array([[-(1 - Y), -(1 - X)], [1 - Y, -X],
                         [-Y, 1 - X], [Y, X]])

    def integrand(Y, X, j):
        db = dbasis(X, Y)
        J = coords.T @ db            # J[a][b] = dx_a/dX_b
        det = np.linalg.det(J)
        Jinv = np.linalg.inv(J)
        gphys = db @ Jinv            # rows: physical gradients
        u = w @ basis(X, Y)
        gu = w @ gphys
        return (gu @ gphys[j] + u * basis(X, Y)[j]) * abs(det)

    expect = np.array([
        dblquad(integrand, 0, 1, 0, 1, args=(j,), epsabs=1e-12)[0]
        for j in range(4)
    ])
    assert np.abs(A - expect).max() < 1e-9


def test_rule_exactness_precondition():
    spec = operator_spec("mass", "tri", 3)
    weak = quadrature_rule("tri", 2)
    with pytest.raises(ValueError, match="degree"):
        build_local_kernel(spec, weak)


def test_cell_mismatch_precondition():
    spec = operator_spec("mass", "tri", 1)
    rule = quadrature_rule("quad", 4)
    with pytest.raises(ValueError, match="quadrature"):
        build_local_kernel(spec, rule)


def test_flops_are_data_independent():
    spec = operator_spec("helmholtz", "quad", 2)
    rule = quadrature_rule("quad", integrand_degree(spec))
    k = build_local_kernel(spec, rule)
    counts = []
    for seed in (0, 1):
        rng = np.random.default_rng(seed)
        A = np.zeros(spec.element.ndof)
        counts.append(interpret(k, {
            "A": A, "coords": REF_QUAD.ravel().copy(),
            "w_0": rng.uniform(-1, 1, spec.element.ndof),
        }))
    assert counts[0] == counts[1]
    assert counts[0].total > 0
