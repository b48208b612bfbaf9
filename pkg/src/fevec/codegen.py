"""Deterministic C source emission for loop kernels.

Three targets:

* ``scalar``      -- plain nested loops (the auto-vectorization baseline).
* ``pragma-simd`` -- every SIMD lane loop is innermost and annotated with
  ``#pragma omp simd``, except race-listed scatters which get a bare
  sequential lane loop.
* ``vector-ext``  -- lane-expanded temporaries become GNU vector types; lane
  loops over pure arithmetic collapse to vector statements.  Indirect
  gathers and ``fabs`` calls fall back to pragma-annotated scalar lane
  loops, and scalar right-hand sides are broadcast by adding the zero
  vector.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from .ir import (
    Abs,
    ArrayDecl,
    BinOp,
    IndexVar,
    Lit,
    LoopKernel,
    LoopNode,
    Neg,
    Read,
    Statement,
    StmtNode,
    Var,
    add,
    floordiv,
    linear_span,
    mul,
    schedule,
    sub,
    substitute,
    validate,
    walk,
)

__all__ = ["Target", "EmittedUnit", "emit", "CodegenError"]


class CodegenError(Exception):
    pass


TARGET_KINDS = ("scalar", "pragma-simd", "vector-ext")


@dataclass(frozen=True)
class Target:
    kind: str
    width: int = 1

    def __post_init__(self):
        if self.kind not in TARGET_KINDS:
            raise ValueError(f"unknown target kind {self.kind!r}")
        if self.kind == "vector-ext" and self.width * 8 not in (16, 32, 64):
            raise ValueError(
                f"vector-ext width {self.width} gives unsupported vector size "
                f"{self.width * 8} bytes (need 16/32/64)"
            )


@dataclass(frozen=True)
class EmittedUnit:
    source: str
    entry: str
    args: tuple  # (name, dtype, intent) triples, 'in' | 'inout'


def _fmt_double(v: float) -> str:
    s = repr(float(v))
    return s


def _fmt_data(decl: ArrayDecl) -> str:
    if decl.dtype == "real64":
        vals = [_fmt_double(v) for v in decl.data]
    else:
        vals = [str(int(v)) for v in decl.data]
    return "{ " + ", ".join(vals) + " }"


class _Emitter:
    def __init__(self, kernel: LoopKernel, target: Target):
        self.kernel = kernel
        self.target = target
        self.decls = {a.name: a for a in kernel.arrays}
        self.lines = []
        self.indent = 1
        lane = kernel.simd_iname
        self.lane = lane.name if lane is not None else None
        self.width = lane.simd_width if lane is not None else 0

    def out(self, s: str):
        self.lines.append("  " * self.indent + s)

    # -- expressions --------------------------------------------------------

    def index_src(self, decl: ArrayDecl, index, drop_lane=False) -> str:
        shape, strides = decl.shape, decl.strides
        if drop_lane:
            shape, strides = shape[:-1], tuple(s // self.width for s in strides[:-1])
            index = index[:-1]
        if not shape:
            return "0"
        terms = []
        for stride, idx in zip(strides, index):
            s = self.expr(idx)
            terms.append(s if stride == 1 else f"{stride} * {s}")
        return " + ".join(terms)

    def access(self, array: str, index, vector_ctx=False) -> str:
        decl = self.decls[array]
        if (
            self.target.kind == "vector-ext"
            and decl.lane_expanded
        ):
            if vector_ctx:
                base = self.index_src(decl, index, drop_lane=True)
                if not decl.shape[:-1]:
                    return array
                return f"{array}[{base}]"
            base = self.index_src(decl, index, drop_lane=True)
            lane = self.expr(index[-1])
            if not decl.shape[:-1]:
                return f"{array}[{lane}]"
            return f"{array}[{base}][{lane}]"
        if not decl.shape:
            return array
        idx = self.index_src(decl, index)
        if decl.kind == "argument":
            return f"{array}[(int64_t) ({idx})]"
        return f"{array}[{idx}]"

    def expr(self, e, vector_ctx=False) -> str:
        if isinstance(e, Lit):
            if isinstance(e.value, float):
                return _fmt_double(e.value)
            return str(e.value)
        if isinstance(e, Var):
            return e.name
        if isinstance(e, Read):
            return self.access(e.array, e.index, vector_ctx)
        if isinstance(e, BinOp):
            op = "/" if e.op == "//" else e.op
            return (
                f"({self.expr(e.a, vector_ctx)} {op} {self.expr(e.b, vector_ctx)})"
            )
        if isinstance(e, Neg):
            return f"(-{self.expr(e.a, vector_ctx)})"
        if isinstance(e, Abs):
            if vector_ctx:
                raise CodegenError("fabs is not supported on vector operands")
            return f"fabs({self.expr(e.a, vector_ctx)})"
        raise CodegenError(f"unsupported expression node for target: {e!r}")

    # -- statements ---------------------------------------------------------

    def stmt_scalar(self, st: Statement):
        lhs = self.access(st.lhs_array, st.lhs_index)
        rhs = self.expr(st.rhs)
        op = "+=" if st.mode == "inc" else "="
        self.out(f"{lhs} {op} {rhs};")

    def _rhs_has_vector(self, e) -> bool:
        for node in walk(e):
            if isinstance(node, Read) and self.decls[node.array].lane_expanded:
                return True
        return False

    def stmt_vector(self, st: Statement):
        lhs = self.access(st.lhs_array, st.lhs_index, vector_ctx=True)
        op = "+=" if st.mode == "inc" else "="
        if self._rhs_has_vector(st.rhs):
            rhs = self.expr(st.rhs, vector_ctx=True)
        elif st.rhs == Lit(0.0):
            rhs = f"_zeros_double{self.width}"
        else:
            # vector extensions do not broadcast scalars automatically
            rhs = f"{self.expr(st.rhs)} + _zeros_double{self.width}"
        self.out(f"{lhs} {op} {rhs};")

    def _needs_scalar_lanes(self, st: Statement) -> bool:
        """Gathers (lane-dependent indirect reads) and abs calls cannot be
        expressed on vector operands."""
        for node in walk(st.rhs):
            if isinstance(node, Abs):
                return True
            if isinstance(node, Read):
                decl = self.decls[node.array]
                if decl.kind == "argument" and any(
                    self.lane is not None and _depends(ix, self.lane)
                    for ix in node.index
                ):
                    return True
        if self.decls[st.lhs_array].kind == "argument":
            return True
        return False

    # -- loop nests ----------------------------------------------------------

    def bound_src(self, exprs, cmp_macro) -> str:
        srcs = [self.expr(b) for b in exprs]
        if len(srcs) == 1:
            return srcs[0]
        raise CodegenError(
            "coupled (multi-expression) loop bounds are not emittable; "
            "use assume_divisible splitting before code generation"
        )

    def loop_header(self, iname: str) -> str:
        iv = self.kernel.iname(iname)
        lo = self.bound_src(iv.lower, "max")
        hi = self.bound_src(iv.upper, "min")
        return f"for (int {iname} = {lo}; {iname} < {hi}; ++{iname}) {{"

    def emit_nodes(self, nodes):
        for node in nodes:
            if isinstance(node, StmtNode):
                self.stmt_scalar(node.stmt)
            else:
                self.emit_loop(node)

    def emit_loop(self, node: LoopNode):
        is_lane = (
            self.lane is not None
            and node.iname == self.lane
            and self.target.kind != "scalar"
        )
        if not is_lane:
            self.out(self.loop_header(node.iname))
            self.indent += 1
            self.emit_nodes(node.children)
            self.indent -= 1
            self.out("}")
            return

        seq = all(
            n.stmt.seq_lane for n in node.children if isinstance(n, StmtNode)
        ) and any(isinstance(n, StmtNode) and n.stmt.seq_lane for n in node.children)
        # a lane loop containing nested loops only occurs for seq_lane stmts
        has_loops = any(isinstance(n, LoopNode) for n in node.children)
        if seq or has_loops:
            # sequential lane loop in natural position, no pragma
            self.out(self.loop_header(node.iname))
            self.indent += 1
            self.emit_nodes(node.children)
            self.indent -= 1
            self.out("}")
            return

        if self.target.kind == "pragma-simd":
            self.out("#pragma omp simd")
            self.out(self.loop_header(node.iname))
            self.indent += 1
            self.emit_nodes(node.children)
            self.indent -= 1
            self.out("}")
            return

        # vector-ext: collapse pure statements, scalar lane loops otherwise
        for child in node.children:
            st = child.stmt
            if self._needs_scalar_lanes(st):
                self.out("#pragma omp simd")
                self.out(self.loop_header(node.iname))
                self.indent += 1
                self.stmt_scalar(st)
                self.indent -= 1
                self.out("}")
            else:
                self.stmt_vector(st)


def _depends(e, name: str) -> bool:
    return any(isinstance(n, Var) and n.name == name for n in walk(e))


def _temp_decl(decl: ArrayDecl, target: Target, width: int) -> str:
    attr = f" __attribute__ ((aligned ({decl.align})))" if decl.align > 8 else ""
    ctype = "double" if decl.dtype == "real64" else "int32_t"
    if target.kind == "vector-ext" and decl.lane_expanded:
        ctype = f"double{width}"
        base = decl.shape[:-1]
        if not base:
            return f"{ctype} {decl.name}{attr};"
        span = 1
        for extent, stride in zip(base, tuple(s // width for s in decl.strides[:-1])):
            span += (extent - 1) * stride
        return f"{ctype} {decl.name}[{span}]{attr};"
    if not decl.shape:
        return f"{ctype} {decl.name};"
    return f"{ctype} {decl.name}[{linear_span(decl)}]{attr};"


def _rename_for_remainder(kernel: LoopKernel, width: int) -> LoopKernel:
    """Suffix the remainder kernel's private names and rebase its start."""
    iname_map = {iv.name: f"{iv.name}_rem" for iv in kernel.inames}
    array_map = {
        a.name: f"{a.name}_rem" for a in kernel.arrays if a.kind == "temporary"
    }
    start_expr = add(
        Var("start"), mul(width, floordiv(sub(Var("end"), Var("start")), width))
    )
    subst = {k: Var(v) for k, v in iname_map.items()}
    subst["start"] = start_expr

    from .ir import rename_arrays

    inames = tuple(
        IndexVar(
            iname_map[iv.name],
            tuple(substitute(b, subst) for b in iv.lower),
            tuple(substitute(b, subst) for b in iv.upper),
            iv.simd_width,
        )
        for iv in kernel.inames
    )
    arrays = tuple(
        replace(a, name=array_map.get(a.name, a.name)) for a in kernel.arrays
    )
    stmts = tuple(
        replace(
            st,
            id=f"{st.id}_rem",
            lhs_array=array_map.get(st.lhs_array, st.lhs_array),
            lhs_index=tuple(
                rename_arrays(substitute(e, subst), array_map) for e in st.lhs_index
            ),
            rhs=rename_arrays(substitute(st.rhs, subst), array_map),
            within=frozenset(iname_map[w] for w in st.within),
            depends_on=frozenset(f"{d}_rem" for d in st.depends_on),
        )
        for st in kernel.stmts
    )
    return replace(kernel, inames=inames, arrays=arrays, stmts=stmts)


def emit(kernel: LoopKernel, remainder=None, target: Target = Target("scalar")) -> EmittedUnit:
    """Emit a compilable translation unit for the kernel (plus an optional
    peeled remainder kernel appended as a second loop nest).

    Emission is a pure function: equal inputs give byte-identical source.
    """
    diags = validate(kernel)
    if diags:
        raise CodegenError(f"kernel fails validation: " + "; ".join(diags))

    lane = kernel.simd_iname
    if target.kind in ("pragma-simd", "vector-ext"):
        if lane is None:
            raise CodegenError(f"{target.kind} target needs a simd-tagged iname")
        if lane.simd_width != target.width:
            raise CodegenError(
                f"kernel lane width {lane.simd_width} != target width {target.width}"
            )
    width = lane.simd_width if lane is not None else 0

    if remainder is not None:
        if set(a.name for a in remainder.arguments) != set(
            a.name for a in kernel.arguments
        ):
            raise CodegenError("remainder kernel has different arguments")
        remainder = _rename_for_remainder(remainder, width or 1)
        rdiags = validate(remainder)
        if rdiags:
            raise CodegenError("remainder fails validation: " + "; ".join(rdiags))

    entry = f"wrap_{kernel.name}"

    dats = [a for a in kernel.arrays if a.kind == "argument" and a.dtype == "real64"]
    maps = [a for a in kernel.arrays if a.kind == "argument" and a.dtype == "int32"]
    written = kernel.written_arrays()
    if remainder is not None:
        written |= remainder.written_arrays()

    sig_args = []
    descriptors = [("start", "int32", "in"), ("end", "int32", "in")]
    for a in dats:
        if a.name in written:
            sig_args.append(f"double *__restrict__ {a.name}")
            descriptors.append((a.name, "real64", "inout"))
        else:
            sig_args.append(f"double const *__restrict__ {a.name}")
            descriptors.append((a.name, "real64", "in"))
    for a in maps:
        sig_args.append(f"int const *__restrict__ {a.name}")
        descriptors.append((a.name, "int32", "in"))

    lines = ["#include <math.h>", "#include <stdint.h>", ""]

    if target.kind == "vector-ext":
        lines.append(
            f"typedef double double{width} __attribute__ "
            f"((vector_size ({width * 8})));"
        )
        lines.append(
            f"static double{width} const _zeros_double{width} __attribute__ "
            "((aligned (64))) = { 0.0 };"
        )
        lines.append("")

    consts = {}
    for k in (kernel, remainder) if remainder is not None else (kernel,):
        for a in k.arrays:
            if a.kind == "constant":
                if a.name in consts and consts[a.name] != a:
                    raise CodegenError(
                        f"conflicting constant payloads for {a.name!r}"
                    )
                consts[a.name] = a
    for a in consts.values():
        ctype = "double" if a.dtype == "real64" else "int32_t"
        lines.append(
            f"static {ctype} const {a.name}[{linear_span(a)}] = {_fmt_data(a)};"
        )
    if consts:
        lines.append("")

    lines.append(f"void {entry}(int const start, int const end,")
    lines.append("              " + ", ".join(sig_args) + ")")
    lines.append("{")

    kernels = [kernel] + ([remainder] if remainder is not None else [])
    for k in kernels:
        tgt = target if k is kernel else Target("scalar")
        for a in k.arrays:
            if a.kind == "temporary":
                lines.append("  " + _temp_decl(a, tgt, width))
    lines.append("")

    for k in kernels:
        tgt = target if k is kernel else Target("scalar")
        em = _Emitter(k, tgt)
        em.emit_nodes(schedule(k))
        lines.extend(em.lines)

    lines.append("}")
    lines.append("")

    return EmittedUnit("\n".join(lines), entry, tuple(descriptors))
