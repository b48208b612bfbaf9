"""Construction of local assembly kernels as loop-IR values.

The generated kernel mirrors the classic form-compiler output: constant
tabulation arrays, a Jacobian block (hoisted out of the quadrature loop on
affine triangle geometry, recomputed per quadrature point on bilinear
quadrilaterals), a quadrature loop evaluating the integrand, and an
accumulation loop over test functions.
"""

from __future__ import annotations

import numpy as np

from .elements import (
    OperatorSpec,
    QuadratureRule,
    integrand_degree,
    reference_element,
    tabulate,
)
from .ir import (
    Abs,
    ArrayDecl,
    IndexVar,
    Lit,
    LoopKernel,
    Neg,
    Read,
    Statement,
    Var,
    add,
    div,
    infer_dependencies,
    mul,
)

__all__ = ["build_local_kernel"]


def _sum(terms):
    acc = None
    for t in terms:
        acc = t if acc is None else add(acc, t)
    return acc if acc is not None else Lit(0.0)


def _comb(pairs):
    """Linear combination of (coefficient, expr) pairs; literal coefficients
    0/1/-1 are folded away."""
    terms = []
    for coef, e in pairs:
        if isinstance(coef, float):
            if coef == 0.0:
                continue
            if coef == 1.0:
                terms.append(e)
                continue
            if coef == -1.0:
                terms.append(Neg(e))
                continue
            terms.append(mul(Lit(coef), e))
        else:
            terms.append(mul(coef, e))
    return _sum(terms)


def build_local_kernel(spec: OperatorSpec, rule: QuadratureRule) -> LoopKernel:
    """Local residual kernel with arguments (A, coords, w_0)."""
    if spec.cell.kind != rule.cell.kind:
        raise ValueError(
            f"operator on {spec.cell.kind} with a {rule.cell.kind} quadrature rule"
        )
    if rule.exactness_degree < integrand_degree(spec):
        raise ValueError(
            f"rule exact to degree {rule.exactness_degree}, integrand estimate "
            f"is {integrand_degree(spec)}"
        )

    elem = spec.element
    vs = elem.value_size
    nd = elem.ndof_scalar
    nv = spec.cell.nvertices
    nq = rule.npoints
    affine = spec.cell.kind == "triangle"

    tab = tabulate(elem, rule)
    gtab = tabulate(spec.geometry, rule)

    def carr(name, a):
        a = np.asarray(a, dtype=float)
        strides = (1,) if a.ndim == 1 else (a.shape[1], 1)
        return ArrayDecl(
            name, "constant", "real64", a.shape, strides, 64,
            tuple(float(v) for v in a.ravel()),
        )

    arrays = [
        ArrayDecl("A", "argument", "real64", (nd * vs,), (1,)),
        ArrayDecl("coords", "argument", "real64", (nv, 2), (2, 1)),
        ArrayDecl("w_0", "argument", "real64", (nd * vs,), (1,)),
        carr("qw", rule.weights),
        carr("phi", tab.values),
        carr("dphi0", tab.grads[:, :, 0]),
        carr("dphi1", tab.grads[:, :, 1]),
    ]
    if not affine:
        arrays.append(carr("gphi0", gtab.grads[:, :, 0]))
        arrays.append(carr("gphi1", gtab.grads[:, :, 1]))

    temps = set()

    def tmp(name):
        temps.add(name)
        return name

    stmts = []
    sid = [0]

    def st(lhs, rhs, within, mode="assign", lhs_index=()):
        sid[0] += 1
        stmts.append(
            Statement(
                f"s{sid[0]}",
                lhs,
                lhs_index,
                mode,
                rhs,
                frozenset(within),
            )
        )

    ip = Var("ip")
    i_ = Var("i")
    j_ = Var("j")

    # Jacobian block: J[a][b] = sum_v coords[v][a] * dgeo_v/dX_b(q)
    jac_within = () if affine else ("ip",)
    ggrads = gtab.grads[0] if affine else None  # constant on triangles
    for a in range(2):
        for b in range(2):
            if affine:
                pairs = [
                    (float(ggrads[v, b]), Read("coords", (Lit(v), Lit(a))))
                    for v in range(nv)
                ]
            else:
                pairs = [
                    (Read(f"gphi{b}", (ip, Lit(v))), Read("coords", (Lit(v), Lit(a))))
                    for v in range(nv)
                ]
            st(tmp(f"J{a}{b}"), _comb(pairs), jac_within)

    def T(name):
        return Read(name, ())

    st(
        tmp("detJ"),
        add(mul(T("J00"), T("J11")), Neg(mul(T("J01"), T("J10")))),
        jac_within,
    )
    st(tmp("detinv"), div(Lit(1.0), T("detJ")), jac_within)
    # J^{-1} = detinv * [[J11, -J01], [-J10, J00]]
    st(tmp("Ji00"), mul(T("detinv"), T("J11")), jac_within)
    st(tmp("Ji01"), Neg(mul(T("detinv"), T("J01"))), jac_within)
    st(tmp("Ji10"), Neg(mul(T("detinv"), T("J10"))), jac_within)
    st(tmp("Ji11"), mul(T("detinv"), T("J00")), jac_within)
    st(tmp("absdet"), Abs(T("detJ")), jac_within)

    def dof(node, comp):
        # node-major, component-fastest layout
        if vs == 1:
            return (node,)
        return (add(mul(vs, node), Lit(comp)),)

    comps = range(vs)
    form = spec.form

    # coefficient evaluation at the quadrature point
    if form in ("mass", "helmholtz"):
        st(tmp("uq"), Lit(0.0), ("ip",))
    if form in ("helmholtz", "laplacian", "elasticity"):
        for c in comps:
            suf = f"_{c}" if vs == 2 else ""
            st(tmp(f"g0{suf}"), Lit(0.0), ("ip",))
            st(tmp(f"g1{suf}"), Lit(0.0), ("ip",))
    if form in ("mass", "helmholtz"):
        st("uq", mul(Read("phi", (ip, i_)), Read("w_0", dof(i_, 0))),
           ("ip", "i"), mode="inc")
    if form in ("helmholtz", "laplacian", "elasticity"):
        for c in comps:
            suf = f"_{c}" if vs == 2 else ""
            for b in range(2):
                st(f"g{b}{suf}",
                   mul(Read(f"dphi{b}", (ip, i_)), Read("w_0", dof(i_, c))),
                   ("ip", "i"), mode="inc")

    st(tmp("tw"), mul(Read("qw", (ip,)), T("absdet")), ("ip",))

    phi_j = Read("phi", (ip, j_))
    dphi_j = (Read("dphi0", (ip, j_)), Read("dphi1", (ip, j_)))

    if form == "mass":
        st(tmp("cm"), mul(T("tw"), T("uq")), ("ip",))
        st("A", mul(T("cm"), phi_j), ("ip", "j"), mode="inc", lhs_index=dof(j_, 0))
    elif form == "helmholtz":
        # physical gradient of u: pu_a = sum_b Jinv[b][a] * g_b
        st(tmp("pu0"), add(mul(T("Ji00"), T("g0")), mul(T("Ji10"), T("g1"))), ("ip",))
        st(tmp("pu1"), add(mul(T("Ji01"), T("g0")), mul(T("Ji11"), T("g1"))), ("ip",))
        # pull the test-function pull-back onto u: c_b = tw * sum_a Jinv[b][a] pu_a
        st(tmp("c0"),
           mul(T("tw"), add(mul(T("Ji00"), T("pu0")), mul(T("Ji01"), T("pu1")))),
           ("ip",))
        st(tmp("c1"),
           mul(T("tw"), add(mul(T("Ji10"), T("pu0")), mul(T("Ji11"), T("pu1")))),
           ("ip",))
        st(tmp("cm"), mul(T("tw"), T("uq")), ("ip",))
        st("A",
           add(add(mul(dphi_j[0], T("c0")), mul(dphi_j[1], T("c1"))),
               mul(phi_j, T("cm"))),
           ("ip", "j"), mode="inc", lhs_index=dof(j_, 0))
    else:
        # physical gradient per component: pu{a}_{c} = d u_c / d x_a
        for c in comps:
            for a in range(2):
                st(tmp(f"pu{a}_{c}"),
                   add(mul(T(f"Ji0{a}"), T(f"g0_{c}")),
                       mul(T(f"Ji1{a}"), T(f"g1_{c}"))),
                   ("ip",))
        if form == "laplacian":
            for c in comps:
                for r in range(2):
                    st(tmp(f"d{r}_{c}"),
                       mul(T("tw"),
                           add(mul(T(f"Ji{r}0"), T(f"pu0_{c}")),
                               mul(T(f"Ji{r}1"), T(f"pu1_{c}")))),
                       ("ip",))
        else:  # elasticity: eps(u) : grad(v), eps symmetric
            st(tmp("e00"), T("pu0_0"), ("ip",))
            st(tmp("e11"), T("pu1_1"), ("ip",))
            st(tmp("e01"), mul(Lit(0.5), add(T("pu1_0"), T("pu0_1"))), ("ip",))
            eps = {(0, 0): "e00", (0, 1): "e01", (1, 0): "e01", (1, 1): "e11"}
            for c in comps:
                for r in range(2):
                    st(tmp(f"d{r}_{c}"),
                       mul(T("tw"),
                           add(mul(T(f"Ji{r}0"), T(eps[(c, 0)])),
                               mul(T(f"Ji{r}1"), T(eps[(c, 1)])))),
                       ("ip",))
        for c in comps:
            st("A",
               add(mul(dphi_j[0], T(f"d0_{c}")), mul(dphi_j[1], T(f"d1_{c}"))),
               ("ip", "j"), mode="inc", lhs_index=dof(j_, c))

    for name in sorted(temps):
        arrays.append(ArrayDecl(name, "temporary", "real64", (), ()))

    inames = (
        IndexVar("ip", (Lit(0),), (Lit(nq),)),
        IndexVar("i", (Lit(0),), (Lit(nd),)),
        IndexVar("j", (Lit(0),), (Lit(nd),)),
    )

    return LoopKernel(
        name=form,
        params=(),
        inames=inames,
        arrays=tuple(arrays),
        stmts=tuple(infer_dependencies(stmts)),
    )
