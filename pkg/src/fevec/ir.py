"""Loop-kernel intermediate representation.

A :class:`LoopKernel` is the transformable unit of the whole pipeline: a set
of named loop indices (inames) with affine bounds, array declarations, and an
ordered list of scalar assign/increment statements.  Kernels are immutable
values; every transformation returns a new kernel.

Domains are rectangular with affine coupling only: an iname's lower bound is
the max of a list of affine expressions in parameters and previously declared
inames, the (exclusive) upper bound the min of such a list.  That is exactly
enough to express the coupled domains produced by iname splitting, without
general polyhedral machinery.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Iterator, Optional, Union

__all__ = [
    "Expr",
    "Lit",
    "Var",
    "Read",
    "BinOp",
    "Neg",
    "Abs",
    "add",
    "sub",
    "mul",
    "div",
    "floordiv",
    "neg",
    "fabs",
    "IndexVar",
    "ArrayDecl",
    "Statement",
    "LoopKernel",
    "FlopCount",
    "LoopNode",
    "StmtNode",
    "schedule",
    "validate",
    "expr_inames",
    "expr_arrays",
    "expr_depends_on",
    "substitute",
    "linear_span",
    "infer_dependencies",
]


# ---------------------------------------------------------------------------
# Expressions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Lit:
    """Literal constant.  Python int -> int32, Python float -> real64."""

    value: Union[int, float]


@dataclass(frozen=True)
class Var:
    """Read of an iname or an integer scalar parameter."""

    name: str


@dataclass(frozen=True)
class Read:
    """Indexed array read.  ``index`` holds one expression per array axis."""

    array: str
    index: tuple


@dataclass(frozen=True)
class BinOp:
    """Binary operation; ``op`` is one of ``+ - * / //``.

    ``//`` is integer floor division and is only valid in index/bound
    positions (both operands non-negative integers in practice).
    """

    op: str
    a: "Expr"
    b: "Expr"


@dataclass(frozen=True)
class Neg:
    a: "Expr"


@dataclass(frozen=True)
class Abs:
    a: "Expr"


Expr = Union[Lit, Var, Read, BinOp, Neg, Abs]


def _wrap(x) -> Expr:
    if isinstance(x, (int, float)):
        return Lit(x)
    return x


def add(a, b) -> Expr:
    return BinOp("+", _wrap(a), _wrap(b))


def sub(a, b) -> Expr:
    return BinOp("-", _wrap(a), _wrap(b))


def mul(a, b) -> Expr:
    return BinOp("*", _wrap(a), _wrap(b))


def div(a, b) -> Expr:
    return BinOp("/", _wrap(a), _wrap(b))


def floordiv(a, b) -> Expr:
    return BinOp("//", _wrap(a), _wrap(b))


def neg(a) -> Expr:
    return Neg(_wrap(a))


def fabs(a) -> Expr:
    return Abs(_wrap(a))


def expr_children(e: Expr) -> tuple:
    if isinstance(e, BinOp):
        return (e.a, e.b)
    if isinstance(e, (Neg, Abs)):
        return (e.a,)
    if isinstance(e, Read):
        return e.index
    return ()


def walk(e: Expr) -> Iterator[Expr]:
    yield e
    for c in expr_children(e):
        yield from walk(c)


def expr_inames(e: Expr, names: Iterable[str]) -> set:
    """Names from ``names`` referenced anywhere in ``e``."""
    names = set(names)
    return {n.name for n in walk(e) if isinstance(n, Var) and n.name in names}


def expr_arrays(e: Expr) -> set:
    return {n.array for n in walk(e) if isinstance(n, Read)}


def expr_depends_on(e: Expr, name: str) -> bool:
    return any(isinstance(n, Var) and n.name == name for n in walk(e))


def substitute(e: Expr, mapping: dict) -> Expr:
    """Replace ``Var(k)`` with ``mapping[k]`` (an Expr) throughout ``e``."""
    if isinstance(e, Var):
        return mapping.get(e.name, e)
    if isinstance(e, Lit):
        return e
    if isinstance(e, Read):
        return Read(e.array, tuple(substitute(i, mapping) for i in e.index))
    if isinstance(e, BinOp):
        return BinOp(e.op, substitute(e.a, mapping), substitute(e.b, mapping))
    if isinstance(e, Neg):
        return Neg(substitute(e.a, mapping))
    if isinstance(e, Abs):
        return Abs(substitute(e.a, mapping))
    raise TypeError(f"not an expression: {e!r}")


def rename_arrays(e: Expr, mapping: dict) -> Expr:
    if isinstance(e, Read):
        return Read(
            mapping.get(e.array, e.array),
            tuple(rename_arrays(i, mapping) for i in e.index),
        )
    if isinstance(e, (Lit, Var)):
        return e
    if isinstance(e, BinOp):
        return BinOp(e.op, rename_arrays(e.a, mapping), rename_arrays(e.b, mapping))
    if isinstance(e, Neg):
        return Neg(rename_arrays(e.a, mapping))
    if isinstance(e, Abs):
        return Abs(rename_arrays(e.a, mapping))
    raise TypeError(f"not an expression: {e!r}")


# ---------------------------------------------------------------------------
# Kernel structure
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class IndexVar:
    """A loop index.

    ``lower`` is a max-reduction over its entries, ``upper`` a (exclusive)
    min-reduction.  ``simd_width`` is None for sequential inames.
    """

    name: str
    lower: tuple = (Lit(0),)
    upper: tuple = (Lit(1),)
    simd_width: Optional[int] = None

    @property
    def tag(self) -> str:
        return "seq" if self.simd_width is None else f"simd({self.simd_width})"


@dataclass(frozen=True)
class ArrayDecl:
    """Array declaration.

    kind: 'argument' | 'constant' | 'temporary'
    dtype: 'real64' | 'int32'
    shape: extents per axis; an argument may use None for an unknown extent.
    strides: element strides per axis (the dim_tags).
    data: flattened constant payload (constants only), stored as a tuple so
          structural equality works.
    """

    name: str
    kind: str
    dtype: str
    shape: tuple
    strides: tuple
    align: int = 8
    data: Optional[tuple] = None
    lane_expanded: bool = False

    def __post_init__(self):
        if self.kind not in ("argument", "constant", "temporary"):
            raise ValueError(f"bad array kind {self.kind!r}")
        if self.dtype not in ("real64", "int32"):
            raise ValueError(f"bad dtype {self.dtype!r}")
        if self.align & (self.align - 1):
            raise ValueError("alignment must be a power of two")
        if len(self.shape) != len(self.strides):
            raise ValueError(f"{self.name}: shape/strides rank mismatch")


@dataclass(frozen=True)
class Statement:
    """One assignment.  mode: 'assign' | 'inc'.

    ``seq_lane`` marks statements whose SIMD lane loop must stay sequential,
    in its natural nesting position (scatter race avoidance).
    """

    id: str
    lhs_array: str
    lhs_index: tuple
    mode: str
    rhs: Expr
    within: frozenset
    depends_on: frozenset = frozenset()
    seq_lane: bool = False

    def __post_init__(self):
        if self.mode not in ("assign", "inc"):
            raise ValueError(f"bad statement mode {self.mode!r}")


@dataclass(frozen=True)
class LoopKernel:
    name: str
    params: tuple = ()
    inames: tuple = ()
    arrays: tuple = ()
    stmts: tuple = ()

    def iname(self, name: str) -> IndexVar:
        for iv in self.inames:
            if iv.name == name:
                return iv
        raise KeyError(f"no iname {name!r} in kernel {self.name!r}")

    def array(self, name: str) -> ArrayDecl:
        for a in self.arrays:
            if a.name == name:
                return a
        raise KeyError(f"no array {name!r} in kernel {self.name!r}")

    def has_iname(self, name: str) -> bool:
        return any(iv.name == name for iv in self.inames)

    @property
    def arguments(self) -> tuple:
        return tuple(a for a in self.arrays if a.kind == "argument")

    @property
    def simd_iname(self) -> Optional[IndexVar]:
        for iv in self.inames:
            if iv.simd_width is not None:
                return iv
        return None

    def written_arrays(self) -> set:
        return {s.lhs_array for s in self.stmts}


@dataclass(frozen=True)
class FlopCount:
    adds: int = 0
    subs: int = 0
    muls: int = 0
    divs: int = 0
    abs_calls: int = 0

    @property
    def total(self) -> int:
        return self.adds + self.subs + self.muls + self.divs + self.abs_calls

    def __add__(self, other: "FlopCount") -> "FlopCount":
        return FlopCount(
            self.adds + other.adds,
            self.subs + other.subs,
            self.muls + other.muls,
            self.divs + other.divs,
            self.abs_calls + other.abs_calls,
        )

    def scaled(self, k: int) -> "FlopCount":
        return FlopCount(
            self.adds * k, self.subs * k, self.muls * k, self.divs * k,
            self.abs_calls * k,
        )


def static_flops(st: Statement) -> FlopCount:
    """Floating-point operations per execution of a statement.

    Index arithmetic (everything inside a Read's subscript) is integer and
    excluded.  A negation counts as one multiplication (it lowers to a
    multiply by -1 or a sign flip).  An increment contributes one add.
    """
    adds = subs = muls = divs = absc = 0

    def visit(e: Expr):
        nonlocal adds, subs, muls, divs, absc
        if isinstance(e, (Lit, Var, Read)):
            return  # Read subscripts are integer address arithmetic
        if isinstance(e, BinOp):
            if e.op == "+":
                adds += 1
            elif e.op == "-":
                subs += 1
            elif e.op == "*":
                muls += 1
            elif e.op == "/":
                divs += 1
            visit(e.a)
            visit(e.b)
        elif isinstance(e, Neg):
            muls += 1
            visit(e.a)
        elif isinstance(e, Abs):
            absc += 1
            visit(e.a)

    visit(st.rhs)
    if st.mode == "inc":
        adds += 1
    return FlopCount(adds, subs, muls, divs, absc)


def linear_span(decl: ArrayDecl) -> int:
    """Number of elements a flat buffer needs to hold this array."""
    span = 1
    for extent, stride in zip(decl.shape, decl.strides):
        if extent is None:
            raise ValueError(f"{decl.name}: unknown extent has no span")
        if extent == 0:
            return 0
        span += (extent - 1) * stride
    return span


# ---------------------------------------------------------------------------
# Scheduling
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LoopNode:
    iname: str
    children: tuple


@dataclass(frozen=True)
class StmtNode:
    stmt: Statement


def stmt_loop_order(kernel: LoopKernel, st: Statement) -> list:
    """Nesting order of a statement's inames, outermost first.

    The order follows the kernel's iname declaration order, except that a
    SIMD-tagged iname is forced innermost -- unless the statement is marked
    ``seq_lane``, in which case the lane keeps its natural position (this
    preserves the original per-cell scatter order exactly).
    """
    order = [iv.name for iv in kernel.inames if iv.name in st.within]
    if not st.seq_lane:
        simd = [n for n in order if kernel.iname(n).simd_width is not None]
        for n in simd:
            order.remove(n)
        order.extend(simd)
    return order


def _next_iname(kernel: LoopKernel, st: Statement, bound: frozenset):
    for n in stmt_loop_order(kernel, st):
        if n not in bound:
            return n
    return None


def schedule(kernel: LoopKernel) -> tuple:
    """Build the loop tree: statements in program order, consecutive
    statements sharing the same next-unbound iname fused under one loop."""

    def build(stmts, bound):
        out = []
        i = 0
        while i < len(stmts):
            nxt = _next_iname(kernel, stmts[i], bound)
            if nxt is None:
                out.append(StmtNode(stmts[i]))
                i += 1
                continue
            j = i
            while j < len(stmts) and _next_iname(kernel, stmts[j], bound) == nxt:
                j += 1
            out.append(LoopNode(nxt, tuple(build(stmts[i:j], bound | {nxt}))))
            i = j
        return out

    return tuple(build(list(kernel.stmts), frozenset()))


# ---------------------------------------------------------------------------
# Dependency inference
# ---------------------------------------------------------------------------


def infer_dependencies(stmts: list) -> list:
    """Fill depends_on conservatively from program order.

    A statement depends on every earlier statement touching the same array
    when at least one of the pair writes it.  This is complete (covers all
    RAW/WAR/WAW pairs at array granularity), so any topological reordering
    is interpreter-equivalent.
    """
    out = []
    for i, st in enumerate(stmts):
        touched = {st.lhs_array} | expr_arrays(st.rhs)
        for idx in st.lhs_index:
            touched |= expr_arrays(idx)
        deps = set(st.depends_on)
        for prev in stmts[:i]:
            prev_touched = {prev.lhs_array} | expr_arrays(prev.rhs)
            for idx in prev.lhs_index:
                prev_touched |= expr_arrays(idx)
            shared = touched & prev_touched
            if any(a == st.lhs_array or a == prev.lhs_array for a in shared):
                deps.add(prev.id)
        out.append(replace(st, depends_on=frozenset(deps)))
    return out


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


def _affine_interval(e: Expr, kernel: LoopKernel, ranges: dict):
    """Interval of an integer expression given literal iname ranges.

    Returns (lo, hi) inclusive, or None when the value is unknown (parameter
    or map read involved).
    """
    if isinstance(e, Lit):
        if isinstance(e.value, float):
            return None
        return (e.value, e.value)
    if isinstance(e, Var):
        return ranges.get(e.name)
    if isinstance(e, Read):
        return None
    if isinstance(e, Neg):
        r = _affine_interval(e.a, kernel, ranges)
        return None if r is None else (-r[1], -r[0])
    if isinstance(e, BinOp):
        ra = _affine_interval(e.a, kernel, ranges)
        rb = _affine_interval(e.b, kernel, ranges)
        if ra is None or rb is None:
            return None
        if e.op == "+":
            return (ra[0] + rb[0], ra[1] + rb[1])
        if e.op == "-":
            return (ra[0] - rb[1], ra[1] - rb[0])
        if e.op == "*":
            vals = [a * b for a in ra for b in rb]
            return (min(vals), max(vals))
        if e.op == "//":
            if rb[0] == rb[1] and rb[0] > 0:
                return (ra[0] // rb[0], ra[1] // rb[0])
            return None
        return None
    return None


def _literal_ranges(kernel: LoopKernel) -> dict:
    """Inclusive ranges of inames whose bounds are plain literals."""
    ranges = {}
    for iv in kernel.inames:
        lows, highs = [], []
        ok = True
        for b in iv.lower:
            r = _affine_interval(b, kernel, ranges)
            if r is None:
                ok = False
                break
            lows.append(r)
        if ok:
            for b in iv.upper:
                r = _affine_interval(b, kernel, ranges)
                if r is None:
                    ok = False
                    break
                highs.append(r)
        if ok and lows and highs:
            lo = max(r[0] for r in lows)
            hi = min(r[1] for r in highs) - 1
            if hi >= lo:
                ranges[iv.name] = (lo, hi)
    return ranges


def validate(kernel: LoopKernel) -> list:
    """Structural diagnostics; empty list means the kernel is well formed."""
    diags = []
    iname_names = {iv.name for iv in kernel.inames}
    known = iname_names | set(kernel.params)
    array_names = {a.name for a in kernel.arrays}
    seen = set()
    for a in kernel.arrays:
        if a.name in seen:
            diags.append(f"duplicate array declaration {a.name!r}")
        seen.add(a.name)
        if a.kind == "constant" and a.data is None:
            diags.append(f"constant array {a.name!r} has no payload")

    stmt_ids = {}
    for st in kernel.stmts:
        if st.id in stmt_ids:
            diags.append(f"duplicate statement id {st.id!r}")
        stmt_ids[st.id] = st

    # one simd iname at most, and at most one per statement by construction
    simd = [iv for iv in kernel.inames if iv.simd_width is not None]
    if len(simd) > 1:
        diags.append("more than one simd-tagged iname")

    ranges = _literal_ranges(kernel)

    for st in kernel.stmts:
        for name in st.within:
            if name not in iname_names:
                diags.append(f"{st.id}: unknown iname {name!r}")
        if st.lhs_array not in array_names:
            diags.append(f"{st.id}: unknown lhs array {st.lhs_array!r}")
        else:
            lhs = kernel.array(st.lhs_array)
            if lhs.kind == "constant":
                diags.append(f"{st.id}: write to constant array {st.lhs_array!r}")
            if st.mode == "inc" and lhs.dtype != "real64":
                diags.append(f"{st.id}: increment on non-real64 array")
            if lhs.shape and len(st.lhs_index) != len(lhs.shape):
                diags.append(f"{st.id}: lhs rank mismatch on {st.lhs_array!r}")

        used = set()
        for idx in st.lhs_index:
            used |= expr_inames(idx, iname_names)
        for node in walk(st.rhs):
            if isinstance(node, Var) and node.name in iname_names:
                used.add(node.name)
            if isinstance(node, Read):
                if node.array not in array_names:
                    diags.append(f"{st.id}: unknown array {node.array!r}")
                else:
                    decl = kernel.array(node.array)
                    if decl.shape and len(node.index) != len(decl.shape):
                        diags.append(
                            f"{st.id}: rank mismatch reading {node.array!r}"
                        )
        missing = used - st.within
        if missing:
            diags.append(
                f"{st.id}: inames {sorted(missing)} used but not in within-set"
            )
        for name in used | {
            v.name
            for v in walk(st.rhs)
            if isinstance(v, Var) and v.name not in iname_names
        }:
            if name not in known:
                diags.append(f"{st.id}: unknown name {name!r}")

        # provable bounds check on rectangular (literal-range) accesses
        def check_access(array: str, index: tuple):
            if array not in array_names:
                return
            decl = kernel.array(array)
            for axis, (idx, extent) in enumerate(zip(index, decl.shape)):
                if extent is None:
                    continue
                r = _affine_interval(idx, kernel, ranges)
                if r is None:
                    continue
                if r[0] < 0 or r[1] >= extent:
                    diags.append(
                        f"{st.id}: access {array}[...] axis {axis} range "
                        f"[{r[0]}, {r[1]}] outside extent {extent}"
                    )

        check_access(st.lhs_array, st.lhs_index)
        for node in walk(st.rhs):
            if isinstance(node, Read):
                check_access(node.array, node.index)

    # dependency graph: known ids, acyclicity, program-order consistency
    order = {st.id: i for i, st in enumerate(kernel.stmts)}
    graph = {}
    for st in kernel.stmts:
        for dep in st.depends_on:
            if dep not in stmt_ids:
                diags.append(f"{st.id}: depends on unknown statement {dep!r}")
            else:
                graph.setdefault(st.id, set()).add(dep)
                if order[dep] > order[st.id]:
                    diags.append(
                        f"{st.id}: program order violates dependency on {dep!r}"
                    )

    color = {}

    def dfs(u, stack):
        color[u] = 1
        for v in graph.get(u, ()):
            if color.get(v) == 1:
                cycle = stack[stack.index(v):] + [v] if v in stack else [u, v]
                diags.append(
                    "dependency cycle through " + ", ".join(sorted({u, v}))
                )
            elif v not in color:
                dfs(v, stack + [v])
        color[u] = 2

    for sid in stmt_ids:
        if sid not in color:
            dfs(sid, [sid])

    return diags
