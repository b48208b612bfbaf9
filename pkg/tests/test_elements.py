"""Reference cells, Lagrange bases, and quadrature rules."""

import math
from fractions import Fraction

import numpy as np
import pytest
import sympy
from hypothesis import given, settings
from hypothesis import strategies as st

from fevec.elements import (
    MAX_QUADRATURE_DEGREE,
    cell_edges,
    integrand_degree,
    lagrange_nodes,
    monomial_integral,
    operator_spec,
    quadrature_rule,
    reference_cell,
    reference_element,
    tabulate,
)

CELLS = ("triangle", "quadrilateral")
DEGREES = (1, 2, 3, 4)


def test_cell_aliases():
    assert reference_cell("tri") is reference_cell("triangle")
    assert reference_cell("quad") is reference_cell("quadrilateral")
    with pytest.raises(ValueError):
        reference_cell("tet")


def test_cell_measures():
    assert reference_cell("tri").measure == Fraction(1, 2)
    assert reference_cell("quad").measure == 1


@pytest.mark.parametrize("cell", CELLS)
@pytest.mark.parametrize("degree", DEGREES)
def test_node_counts(cell, degree):
    c = reference_cell(cell)
    nodes = lagrange_nodes(c, degree)
    if cell == "triangle":
        expect = (degree + 1) * (degree + 2) // 2
    else:
        expect = (degree + 1) ** 2
    assert len(nodes) == expect
    assert len(set(nodes)) == expect  # all distinct


@pytest.mark.parametrize("cell", CELLS)
def test_node_ordering_vertices_then_edges(cell):
    c = reference_cell(cell)
    nodes = lagrange_nodes(c, 3)
    assert tuple(nodes[: c.nvertices]) == c.vertices
    # the next blocks are edge interiors, two nodes per edge for degree 3,
    # running from the lower- to the higher-numbered vertex
    pos = c.nvertices
    for a, b in cell_edges(c):
        va, vb = c.vertices[a], c.vertices[b]
        first = nodes[pos]
        assert first == (va[0] + Fraction(1, 3) * (vb[0] - va[0]),
                         va[1] + Fraction(1, 3) * (vb[1] - va[1]))
        pos += 2


@pytest.mark.parametrize("cell", CELLS)
@pytest.mark.parametrize("degree", DEGREES)
def test_basis_is_nodal(cell, degree):
    elem = reference_element(cell, degree)
    rule = quadrature_rule(cell, 2 * degree)
    # evaluating at the nodes themselves must give the identity
    pts = np.array([[float(x), float(y)] for x, y in elem.nodes])
    vals = np.array(
        [[float(x) ** a * float(y) ** b for (a, b) in elem.exponents]
         for x, y in elem.nodes]
    ) @ elem.coeffs
    assert np.abs(vals - np.eye(elem.ndof_scalar)).max() < 1e-9
    del pts, rule


@pytest.mark.parametrize("cell", CELLS)
@pytest.mark.parametrize("degree", DEGREES)
def test_partition_of_unity_and_gradient_sum(cell, degree):
    elem = reference_element(cell, degree)
    rule = quadrature_rule(cell, 2 * degree + 1)
    tab = tabulate(elem, rule)
    assert np.abs(tab.values.sum(axis=1) - 1.0).max() < 1e-12
    assert np.abs(tab.grads.sum(axis=1)).max() < 1e-10


def test_degree_range_errors():
    with pytest.raises(ValueError):
        reference_element("tri", 0)
    with pytest.raises(ValueError):
        reference_element("tri", 5)
    with pytest.raises(ValueError):
        reference_element("tri", 2, value_size=3)


@pytest.mark.parametrize("cell", CELLS)
@pytest.mark.parametrize("degree", range(0, MAX_QUADRATURE_DEGREE + 1))
def test_quadrature_exactness(cell, degree):
    c = reference_cell(cell)
    rule = quadrature_rule(c, degree)
    assert (rule.weights > 0).all()
    if cell == "triangle":
        monos = [(a, b) for a in range(degree + 1) for b in range(degree + 1 - a)]
    else:
        monos = [(a, b) for a in range(degree + 1) for b in range(degree + 1)]
    x, y = rule.points[:, 0], rule.points[:, 1]
    for a, b in monos:
        approx = float((rule.weights * x**a * y**b).sum())
        exact = float(monomial_integral(c, a, b))
        assert math.isclose(approx, exact, rel_tol=1e-12, abs_tol=1e-13), (a, b)


def test_quadrature_weight_sum_is_cell_measure():
    for cell in CELLS:
        c = reference_cell(cell)
        rule = quadrature_rule(c, 7)
        assert math.isclose(rule.weights.sum(), float(c.measure), rel_tol=1e-13)


def test_quadrature_degree_errors():
    with pytest.raises(ValueError):
        quadrature_rule("tri", -1)
    with pytest.raises(ValueError):
        quadrature_rule("tri", MAX_QUADRATURE_DEGREE + 1)


@given(a=st.integers(0, 6), b=st.integers(0, 6),
       cell=st.sampled_from(CELLS))
@settings(max_examples=40, deadline=None)
def test_monomial_integral_matches_sympy(a, b, cell):
    x, y = sympy.symbols("x y")
    if cell == "triangle":
        exact = sympy.integrate(x**a * y**b, (y, 0, 1 - x), (x, 0, 1))
    else:
        exact = sympy.integrate(x**a * y**b, (y, 0, 1), (x, 0, 1))
    got = monomial_integral(reference_cell(cell), a, b)
    assert Fraction(int(exact.p), int(exact.q)) == got


def test_operator_spec_validation():
    with pytest.raises(ValueError):
        operator_spec("biharmonic", "tri", 1)
    spec = operator_spec("laplacian", "quad", 2)
    assert spec.element.value_size == 2
    assert integrand_degree(spec) == 6
    assert integrand_degree(operator_spec("mass", "tri", 3)) == 6
