"""Reference cells, Lagrange elements, quadrature and basis tabulation."""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy.special import roots_jacobi, roots_legendre

__all__ = [
    "ReferenceCell",
    "ReferenceElement",
    "QuadratureRule",
    "Tabulation",
    "OperatorSpec",
    "reference_cell",
    "reference_element",
    "quadrature_rule",
    "tabulate",
    "monomial_integral",
    "MAX_QUADRATURE_DEGREE",
]

MAX_QUADRATURE_DEGREE = 20
MAX_ELEMENT_DEGREE = 4

OPERATOR_FORMS = ("mass", "helmholtz", "laplacian", "elasticity")


@dataclass(frozen=True)
class ReferenceCell:
    kind: str                 # 'triangle' | 'quadrilateral'
    vertices: tuple           # canonical vertex coordinates
    measure: Fraction

    @property
    def dim(self) -> int:
        return 2

    @property
    def nvertices(self) -> int:
        return len(self.vertices)


_TRIANGLE = ReferenceCell(
    "triangle",
    ((Fraction(0), Fraction(0)), (Fraction(1), Fraction(0)), (Fraction(0), Fraction(1))),
    Fraction(1, 2),
)
# tensor vertex order: (0,0), (1,0), (0,1), (1,1)
_QUAD = ReferenceCell(
    "quadrilateral",
    (
        (Fraction(0), Fraction(0)),
        (Fraction(1), Fraction(0)),
        (Fraction(0), Fraction(1)),
        (Fraction(1), Fraction(1)),
    ),
    Fraction(1),
)

_CELLS = {"triangle": _TRIANGLE, "quadrilateral": _QUAD, "tri": _TRIANGLE, "quad": _QUAD}


def reference_cell(kind: str) -> ReferenceCell:
    try:
        return _CELLS[kind]
    except KeyError:
        raise ValueError(
            f"unsupported cell {kind!r}; expected 'triangle' or 'quadrilateral'"
        ) from None


def cell_edges(cell: ReferenceCell) -> tuple:
    """Edges as vertex-index pairs, ordered lexicographically."""
    if cell.kind == "triangle":
        return ((0, 1), (0, 2), (1, 2))
    return ((0, 1), (0, 2), (1, 3), (2, 3))


# ---------------------------------------------------------------------------
# Lagrange elements
# ---------------------------------------------------------------------------


def _monomials(cell: ReferenceCell, k: int) -> list:
    if cell.kind == "triangle":
        return [(a, b) for a in range(k + 1) for b in range(k + 1 - a)]
    return [(a, b) for a in range(k + 1) for b in range(k + 1)]


def lagrange_nodes(cell: ReferenceCell, k: int) -> list:
    """Equispaced nodes: vertices first, then per-edge nodes (edges ordered by
    vertex pairs, nodes from the lower- to the higher-index vertex), then
    interior nodes in lexicographic order."""
    nodes = [tuple(v) for v in cell.vertices]
    verts = cell.vertices
    for a, b in cell_edges(cell):
        va, vb = verts[a], verts[b]
        for i in range(1, k):
            t = Fraction(i, k)
            nodes.append((va[0] + t * (vb[0] - va[0]), va[1] + t * (vb[1] - va[1])))
    interior = []
    if cell.kind == "triangle":
        for i in range(1, k):
            for j in range(1, k - i):
                interior.append((Fraction(i, k), Fraction(j, k)))
    else:
        for i in range(1, k):
            for j in range(1, k):
                interior.append((Fraction(i, k), Fraction(j, k)))
    interior.sort()
    nodes.extend(interior)
    return nodes


@dataclass(frozen=True)
class ReferenceElement:
    cell: ReferenceCell
    degree: int
    value_size: int
    nodes: tuple                      # reference coordinates (Fractions)
    coeffs: np.ndarray = field(compare=False)  # [nmono][ndof] basis coefficients
    exponents: tuple = ()

    @property
    def ndof_scalar(self) -> int:
        return len(self.nodes)

    @property
    def ndof(self) -> int:
        return self.ndof_scalar * self.value_size


def reference_element(cell, degree: int, value_size: int = 1) -> ReferenceElement:
    """Equispaced Lagrange element; basis solved from the Vandermonde system."""
    if isinstance(cell, str):
        cell = reference_cell(cell)
    if not 1 <= degree <= MAX_ELEMENT_DEGREE:
        raise ValueError(
            f"unsupported degree {degree}; supported range is 1..{MAX_ELEMENT_DEGREE}"
        )
    if value_size not in (1, 2):
        raise ValueError(f"value_size must be 1 or 2, got {value_size}")
    nodes = lagrange_nodes(cell, degree)
    exps = _monomials(cell, degree)
    V = np.array(
        [[float(x) ** a * float(y) ** b for (a, b) in exps] for (x, y) in nodes]
    )
    coeffs = np.linalg.solve(V, np.eye(len(nodes)))
    resid = np.abs(V @ coeffs - np.eye(len(nodes))).max()
    if resid >= 1e-10:
        raise ValueError(f"ill-conditioned Vandermonde system (residual {resid:.2e})")
    coeffs.setflags(write=False)
    return ReferenceElement(cell, degree, value_size, tuple(nodes), coeffs, tuple(exps))


# ---------------------------------------------------------------------------
# Quadrature
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QuadratureRule:
    cell: ReferenceCell
    points: np.ndarray = field(compare=False)   # [nq][2]
    weights: np.ndarray = field(compare=False)  # [nq]
    exactness_degree: int

    @property
    def npoints(self) -> int:
        return len(self.weights)


def quadrature_rule(cell, required_degree: int) -> QuadratureRule:
    """A rule exact for all polynomials up to ``required_degree``.

    Quadrilaterals use tensor-product Gauss-Legendre.  Triangles use the
    conical (Duffy) product of Gauss-Legendre with Gauss-Jacobi(1, 0), which
    has strictly positive weights at every degree.
    """
    if isinstance(cell, str):
        cell = reference_cell(cell)
    if required_degree < 0:
        raise ValueError("required_degree must be >= 0")
    if required_degree > MAX_QUADRATURE_DEGREE:
        raise ValueError(
            f"quadrature degree {required_degree} above the implemented maximum "
            f"{MAX_QUADRATURE_DEGREE}"
        )
    n = (required_degree + 2) // 2  # ceil((d+1)/2)
    xg, wg = roots_legendre(n)
    # map from [-1, 1] to [0, 1]
    x01, w01 = (xg + 1.0) / 2.0, wg / 2.0
    if cell.kind == "quadrilateral":
        pts = np.array([(x, y) for x in x01 for y in x01])
        wts = np.array([wx * wy for wx in w01 for wy in w01])
    else:
        # x = u*(1-v), y = v with Jacobian (1-v) absorbed by the Jacobi weight
        xj, wj = roots_jacobi(n, 1.0, 0.0)
        v01 = (xj + 1.0) / 2.0
        wv = wj / 4.0  # 1/2 for the interval map, 1/2 for the (1-v) scaling
        pts = np.array([(u * (1.0 - v), v) for u in x01 for v in v01])
        wts = np.array([wu * w for wu in w01 for w in wv])
    pts.setflags(write=False)
    wts.setflags(write=False)
    return QuadratureRule(cell, pts, wts, required_degree)


def monomial_integral(cell: ReferenceCell, a: int, b: int) -> Fraction:
    """Exact integral of x^a y^b over the reference cell."""
    if cell.kind == "quadrilateral":
        return Fraction(1, (a + 1) * (b + 1))
    # over the unit triangle: a! b! / (a + b + 2)!
    num = Fraction(1)
    import math

    return Fraction(math.factorial(a) * math.factorial(b), math.factorial(a + b + 2)) * num


# ---------------------------------------------------------------------------
# Tabulation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Tabulation:
    values: np.ndarray   # [nq][ndof_scalar]
    grads: np.ndarray    # [nq][ndof_scalar][2]


def tabulate(element: ReferenceElement, rule: QuadratureRule) -> Tabulation:
    """Values and first derivatives of each scalar basis function at every
    quadrature point."""
    if element.cell.kind != rule.cell.kind:
        raise ValueError(
            f"element on {element.cell.kind} tabulated with {rule.cell.kind} rule"
        )
    pts = np.asarray(rule.points, dtype=float)
    exps = element.exponents
    nq, nm = len(pts), len(exps)
    mono = np.empty((nq, nm))
    dmono = np.empty((nq, nm, 2))
    x, y = pts[:, 0], pts[:, 1]
    for m, (a, b) in enumerate(exps):
        mono[:, m] = x**a * y**b
        dmono[:, m, 0] = a * x ** (a - 1) * y**b if a else 0.0
        dmono[:, m, 1] = b * x**a * y ** (b - 1) if b else 0.0
    values = mono @ element.coeffs
    grads = np.einsum("qmd,mi->qid", dmono, element.coeffs)
    values.setflags(write=False)
    grads.setflags(write=False)
    return Tabulation(values, grads)


# ---------------------------------------------------------------------------
# Operator specification
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OperatorSpec:
    """Which weak form, over which (identical) coefficient/test space."""

    form: str
    element: ReferenceElement
    geometry: ReferenceElement

    def __post_init__(self):
        if self.form not in OPERATOR_FORMS:
            raise ValueError(
                f"unknown form {self.form!r}; expected one of {OPERATOR_FORMS}"
            )
        need_vs = 2 if self.form in ("laplacian", "elasticity") else 1
        if self.element.value_size != need_vs:
            raise ValueError(
                f"{self.form} requires value_size {need_vs}, "
                f"got {self.element.value_size}"
            )
        if self.geometry.degree != 1 or self.geometry.cell.kind != self.element.cell.kind:
            raise ValueError("geometry element must be degree 1 on the same cell")

    @property
    def cell(self) -> ReferenceCell:
        return self.element.cell


def operator_spec(form: str, cell, degree: int) -> OperatorSpec:
    """Convenience constructor from (form, cell kind, degree)."""
    if isinstance(cell, str):
        cell = reference_cell(cell)
    vs = 2 if form in ("laplacian", "elasticity") else 1
    elem = reference_element(cell, degree, vs)
    geo = reference_element(cell, 1, 2)
    return OperatorSpec(form, elem, geo)


def integrand_degree(spec: OperatorSpec) -> int:
    """Conservative quadrature-degree estimate: 2k on triangles, 2k + 2 on
    quadrilaterals (non-constant Jacobian factor)."""
    k = spec.element.degree
    est = 2 * k
    if spec.cell.kind == "quadrilateral":
        est += 2
    return est
