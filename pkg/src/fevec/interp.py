"""Reference interpreter for loop kernels.

The interpreter is the semantic oracle for every transformation and code
generation target: it executes a kernel with strictly sequential semantics
(SIMD tags are treated as ordinary loops, with the lane forced innermost
exactly as the schedule dictates) and tallies floating-point operations.

For speed the kernel is translated once into a Python function (plain nested
loops over flat numpy buffers) and cached; the semantics are identical to a
tree-walking evaluation, which is kept as a slow path to produce precise
diagnostics when a runtime index goes out of range.
"""

from __future__ import annotations

import functools

import numpy as np

from .ir import (
    Abs,
    ArrayDecl,
    BinOp,
    FlopCount,
    Lit,
    LoopKernel,
    LoopNode,
    Neg,
    Read,
    Statement,
    StmtNode,
    Var,
    linear_span,
    schedule,
    static_flops,
    validate,
)

__all__ = ["interpret", "InterpreterError", "count_flops"]

_DTYPES = {"real64": np.float64, "int32": np.int32}


class InterpreterError(Exception):
    pass


def _index_src(decl: ArrayDecl, index: tuple, expr_src) -> str:
    if not decl.shape:
        return "0"
    terms = []
    for stride, idx in zip(decl.strides, index):
        s = expr_src(idx)
        terms.append(s if stride == 1 else f"{stride}*({s})")
    return " + ".join(terms)


def _compile_src(kernel: LoopKernel) -> str:
    decls = {a.name: a for a in kernel.arrays}

    def expr_src(e) -> str:
        if isinstance(e, Lit):
            return repr(e.value)
        if isinstance(e, Var):
            return e.name
        if isinstance(e, Read):
            d = decls[e.array]
            return f"A_{e.array}[{_index_src(d, e.index, expr_src)}]"
        if isinstance(e, BinOp):
            return f"({expr_src(e.a)} {e.op} {expr_src(e.b)})"
        if isinstance(e, Neg):
            return f"(-({expr_src(e.a)}))"
        if isinstance(e, Abs):
            return f"abs({expr_src(e.a)})"
        raise TypeError(f"not an expression: {e!r}")

    lines = ["def __kern(B, P, C):"]

    def emit(s, depth):
        lines.append("    " * (depth + 1) + s)

    for p in kernel.params:
        emit(f"{p} = P[{p!r}]", 0)
    for a in kernel.arrays:
        if a.kind == "temporary":
            emit(f"A_{a.name} = _zeros({linear_span(a)}, _dt[{a.dtype!r}])", 0)
        else:
            emit(f"A_{a.name} = B[{a.name!r}]", 0)

    stmt_slot = {st.id: i for i, st in enumerate(kernel.stmts)}

    def bound_src(exprs, fn):
        srcs = [expr_src(b) for b in exprs]
        return srcs[0] if len(srcs) == 1 else f"{fn}({', '.join(srcs)})"

    def emit_node(node, depth):
        if isinstance(node, StmtNode):
            st = node.stmt
            emit(f"C[{stmt_slot[st.id]}] += 1", depth)
            d = decls[st.lhs_array]
            lhs = f"A_{st.lhs_array}[{_index_src(d, st.lhs_index, expr_src)}]"
            rhs = expr_src(st.rhs)
            if st.mode == "inc":
                emit(f"{lhs} = {lhs} + ({rhs})", depth)
            else:
                emit(f"{lhs} = {rhs}", depth)
        else:
            iv = kernel.iname(node.iname)
            lo = bound_src(iv.lower, "max")
            hi = bound_src(iv.upper, "min")
            emit(f"for {node.iname} in range({lo}, {hi}):", depth)
            for c in node.children:
                emit_node(c, depth + 1)

    tree = schedule(kernel)
    if not tree:
        emit("pass", 0)
    for node in tree:
        emit_node(node, 0)
    return "\n".join(lines)


@functools.lru_cache(maxsize=256)
def _compiled(kernel: LoopKernel):
    src = _compile_src(kernel)
    ns = {"_zeros": np.zeros, "_dt": _DTYPES}
    exec(compile(src, f"<kernel {kernel.name}>", "exec"), ns)
    return ns["__kern"]


def _check_bindings(kernel: LoopKernel, bindings: dict):
    for a in kernel.arguments:
        if a.name not in bindings:
            raise InterpreterError(f"argument {a.name!r} is not bound")
        buf = bindings[a.name]
        if not isinstance(buf, np.ndarray) or buf.ndim != 1:
            raise InterpreterError(f"{a.name}: buffers must be flat numpy arrays")
        if buf.dtype != _DTYPES[a.dtype]:
            raise InterpreterError(
                f"{a.name}: expected dtype {a.dtype}, got {buf.dtype}"
            )
        if None not in a.shape and buf.size < linear_span(a):
            raise InterpreterError(
                f"{a.name}: buffer of {buf.size} elements, need {linear_span(a)}"
            )
        if a.dtype == "int32" and buf.size and int(buf.min()) < 0:
            raise InterpreterError(f"{a.name}: negative map index")


def _const_buffers(kernel: LoopKernel) -> dict:
    out = {}
    for a in kernel.arrays:
        if a.kind == "constant":
            out[a.name] = np.asarray(a.data, dtype=_DTYPES[a.dtype])
    return out


def interpret(kernel: LoopKernel, bindings: dict, params: dict = None) -> FlopCount:
    """Execute the kernel sequentially, mutating the bound argument buffers.

    Returns the floating-point operation tally (one count per executed
    add/sub/mul/div/abs on real64; integer address arithmetic excluded).
    """
    diags = validate(kernel)
    if diags:
        raise InterpreterError(
            f"kernel {kernel.name!r} fails validation: " + "; ".join(diags)
        )
    params = dict(params or {})
    for p in kernel.params:
        if p not in params:
            raise InterpreterError(f"parameter {p!r} is not bound")
        params[p] = int(params[p])
    _check_bindings(kernel, bindings)

    buffers = dict(bindings)
    buffers.update(_const_buffers(kernel))

    counts = [0] * len(kernel.stmts)
    snapshot = {k: v.copy() for k, v in bindings.items()}
    try:
        _compiled(kernel)(buffers, params, counts)
    except IndexError:
        # restore and re-run slowly to report the offending statement
        for k, v in snapshot.items():
            bindings[k][...] = v
        _slow_run(kernel, buffers, params)
        raise  # slow path did not reproduce it; re-raise the original

    total = FlopCount()
    for st, n in zip(kernel.stmts, counts):
        if n:
            total = total + static_flops(st).scaled(n)
    return total


def count_flops(kernel: LoopKernel, bindings: dict, params: dict = None) -> FlopCount:
    """Flop tally on scratch copies of the buffers (inputs left untouched)."""
    scratch = {k: v.copy() for k, v in bindings.items()}
    return interpret(kernel, scratch, params)


# ---------------------------------------------------------------------------
# Slow tree-walking path (diagnostics only)
# ---------------------------------------------------------------------------


def _slow_run(kernel: LoopKernel, buffers: dict, params: dict):
    decls = {a.name: a for a in kernel.arrays}

    def ev(e, env):
        if isinstance(e, Lit):
            return e.value
        if isinstance(e, Var):
            return env[e.name] if e.name in env else params[e.name]
        if isinstance(e, Read):
            return buffers[e.array][_lin(decls[e.array], e.index, env)]
        if isinstance(e, BinOp):
            a, b = ev(e.a, env), ev(e.b, env)
            if e.op == "+":
                return a + b
            if e.op == "-":
                return a - b
            if e.op == "*":
                return a * b
            if e.op == "/":
                return a / b
            return a // b
        if isinstance(e, Neg):
            return -ev(e.a, env)
        return abs(ev(e.a, env))

    def _lin(decl, index, env):
        off = 0
        for stride, idx in zip(decl.strides, index):
            off += stride * int(ev(idx, env))
        return off

    def run_stmt(st: Statement, env):
        decl = decls[st.lhs_array]
        buf = buffers[st.lhs_array]
        try:
            off = _lin(decl, st.lhs_index, env)
            if off < 0 or off >= buf.size:
                raise IndexError
            val = ev(st.rhs, env)
            # rhs reads are range-checked the same way
            buf[off] = buf[off] + val if st.mode == "inc" else val
        except IndexError:
            inames = {k: v for k, v in env.items()}
            raise InterpreterError(
                f"index out of range in statement {st.id!r} at inames {inames}"
            ) from None

    def run(nodes, env):
        for node in nodes:
            if isinstance(node, StmtNode):
                run_stmt(node.stmt, env)
            else:
                iv = kernel.iname(node.iname)
                lo = max(int(ev(b, env)) for b in iv.lower)
                hi = min(int(ev(b, env)) for b in iv.upper)
                for v in range(lo, hi):
                    env[node.iname] = v
                    run(node.children, env)
                env.pop(node.iname, None)

    run(schedule(kernel), {})
