"""Cross-element vectorization pipeline.

Wrapper construction fuses the local kernel into a global gather / compute /
scatter loop over mesh cells; the cell loop is then split into an outer loop
and a constant-width lane loop, and the lane is SIMD-tagged with vector
expansion of every lane-written temporary.  The scatter increments global
data through a lane-dependent indirection map and is therefore kept as a
sequential lane loop in its original nesting position, which preserves the
exact floating-point accumulation order of the unbatched kernel.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from .elements import OperatorSpec
from .ir import (
    ArrayDecl,
    IndexVar,
    Lit,
    LoopKernel,
    Read,
    Statement,
    Var,
    add,
    expr_depends_on,
    floordiv,
    infer_dependencies,
    linear_span,
    mul,
    rename_arrays,
    sub,
    substitute,
    walk,
)

__all__ = [
    "MapEntry",
    "MapsSpec",
    "BatchPlan",
    "maps_for",
    "build_global_wrapper",
    "split_iname",
    "detect_races",
    "tag_simd",
    "vectorize_pipeline",
    "main_extent",
]

SUPPORTED_WIDTHS = (1, 2, 4, 8, 16)


@dataclass(frozen=True)
class MapEntry:
    """Access descriptor for one kernel argument."""

    map_name: str
    arity: int           # local indices per cell
    access: str          # 'read' | 'inc'
    value_size: int = 1


@dataclass(frozen=True)
class MapsSpec:
    entries: tuple

    def __post_init__(self):
        incs = [e for e in self.entries if e.access == "inc"]
        if len(incs) != 1:
            raise ValueError("exactly one increment argument expected")
        for e in self.entries:
            if e.access not in ("read", "inc"):
                raise ValueError(f"bad access descriptor {e.access!r}")
            if e.arity < 1:
                raise ValueError("map arity must be positive")


@dataclass(frozen=True)
class BatchPlan:
    width: int
    lane: str = "n_simd"
    alignment: int = 64

    def __post_init__(self):
        if self.width not in SUPPORTED_WIDTHS:
            raise ValueError(
                f"unsupported batch width {self.width}; choose from "
                f"{SUPPORTED_WIDTHS}"
            )


def maps_for(spec: OperatorSpec) -> MapsSpec:
    """Canonical maps for a (A, coords, w_0) local kernel: the output and the
    coefficient share the dof map, coordinates use the vertex map."""
    nd = spec.element.ndof_scalar
    vs = spec.element.value_size
    nv = spec.cell.nvertices
    return MapsSpec(
        (
            MapEntry("map0", nd, "inc", vs),
            MapEntry("map1", nv, "read", 2),
            MapEntry("map0", nd, "read", vs),
        )
    )


# ---------------------------------------------------------------------------
# Global wrapper construction
# ---------------------------------------------------------------------------


def build_global_wrapper(local: LoopKernel, maps: MapsSpec) -> LoopKernel:
    """Fuse the local kernel into a cell loop with gathers and a scatter."""
    args = local.arguments
    if len(args) != len(maps.entries):
        raise ValueError(
            f"local kernel has {len(args)} arguments, maps spec has "
            f"{len(maps.entries)} entries"
        )
    for arg, entry in zip(args, maps.entries):
        if linear_span(arg) != entry.arity * entry.value_size:
            raise ValueError(
                f"argument {arg.name!r} spans {linear_span(arg)} elements, map "
                f"{entry.map_name!r} provides {entry.arity} x {entry.value_size}"
            )

    n = Var("n")
    arrays = []
    inames = [IndexVar("n", (Var("start"),), (Var("end"),))]
    stmts = []
    temp_of = {}

    # global data arguments and the indirection maps
    for i, arg in enumerate(args):
        arrays.append(ArrayDecl(f"dat{i}", "argument", "real64", (None,), (1,)))
    seen_maps = []
    for entry in maps.entries:
        if entry.map_name not in seen_maps:
            seen_maps.append(entry.map_name)
            arrays.append(
                ArrayDecl(entry.map_name, "argument", "int32", (None,), (1,))
            )

    # local-sized staging temporaries, one per argument
    for i, arg in enumerate(args):
        temp_of[arg.name] = f"t{i}"
        arrays.append(
            ArrayDecl(f"t{i}", "temporary", "real64", arg.shape, arg.strides)
        )

    def pack_index(arg: ArrayDecl, node, comp, vs):
        """Index into the staging temporary for (node, component)."""
        if len(arg.shape) == 2:
            return (node, comp)
        if vs == 1:
            return (node,)
        return (add(mul(vs, node), comp),)

    def global_index(entry: MapEntry, node, comp):
        m = Read(entry.map_name, (add(mul(entry.arity, n), node),))
        if entry.value_size == 1:
            return (m,)
        return (add(mul(entry.value_size, m), comp),)

    sid = [0]

    def new_stmt(lhs, lhs_index, rhs, within, mode="assign"):
        sid[0] += 1
        stmts.append(
            Statement(f"w{sid[0]}", lhs, lhs_index, mode, rhs, frozenset(within))
        )

    # gathers
    for i, (arg, entry) in enumerate(zip(args, maps.entries)):
        if entry.access != "read":
            continue
        node_iname = f"i_g{i}"
        inames.append(IndexVar(node_iname, (Lit(0),), (Lit(entry.arity),)))
        within = ["n", node_iname]
        node = Var(node_iname)
        if entry.value_size > 1:
            comp_iname = f"i_c{i}"
            inames.append(IndexVar(comp_iname, (Lit(0),), (Lit(entry.value_size),)))
            within.append(comp_iname)
            comp = Var(comp_iname)
        else:
            comp = Lit(0)
        new_stmt(
            f"t{i}",
            pack_index(arg, node, comp, entry.value_size),
            Read(f"dat{i}", global_index(entry, node, comp)),
            within,
        )

    # zero-initialize the output staging temporary
    out_pos = next(
        i for i, e in enumerate(maps.entries) if e.access == "inc"
    )
    out_arg, out_entry = args[out_pos], maps.entries[out_pos]
    if len(out_arg.shape) != 1:
        raise ValueError("increment argument must be one-dimensional")
    inames.append(IndexVar("i_z", (Lit(0),), (Lit(out_arg.shape[0]),)))
    new_stmt(f"t{out_pos}", (Var("i_z"),), Lit(0.0), ("n", "i_z"))

    # inline the local kernel
    array_ren = dict(temp_of)
    for a in local.arrays:
        if a.kind == "temporary":
            array_ren[a.name] = f"form_{a.name}"
            arrays.append(replace(a, name=f"form_{a.name}"))
        elif a.kind == "constant":
            arrays.append(a)
    iname_ren = {iv.name: f"form_{iv.name}" for iv in local.inames}
    for iv in local.inames:
        inames.append(
            replace(
                iv,
                name=iname_ren[iv.name],
                lower=tuple(substitute(b, {k: Var(v) for k, v in iname_ren.items()})
                            for b in iv.lower),
                upper=tuple(substitute(b, {k: Var(v) for k, v in iname_ren.items()})
                            for b in iv.upper),
            )
        )
    var_map = {k: Var(v) for k, v in iname_ren.items()}
    for st in local.stmts:
        rhs = rename_arrays(substitute(st.rhs, var_map), array_ren)
        lhs_index = tuple(
            rename_arrays(substitute(e, var_map), array_ren) for e in st.lhs_index
        )
        stmts.append(
            Statement(
                f"form_{st.id}",
                array_ren.get(st.lhs_array, st.lhs_array),
                lhs_index,
                st.mode,
                rhs,
                frozenset(iname_ren.get(w, w) for w in st.within) | {"n"},
            )
        )

    # scatter-add the output
    inames.append(IndexVar("i_s", (Lit(0),), (Lit(out_entry.arity),)))
    within = ["n", "i_s"]
    node = Var("i_s")
    if out_entry.value_size > 1:
        inames.append(IndexVar("i_sc", (Lit(0),), (Lit(out_entry.value_size),)))
        within.append("i_sc")
        comp = Var("i_sc")
    else:
        comp = Lit(0)
    new_stmt(
        f"dat{out_pos}",
        global_index(out_entry, node, comp),
        Read(f"t{out_pos}", pack_index(out_arg, node, comp, out_entry.value_size)),
        within,
        mode="inc",
    )

    return LoopKernel(
        name=local.name,
        params=("start", "end"),
        inames=tuple(inames),
        arrays=tuple(arrays),
        stmts=tuple(infer_dependencies(stmts)),
    )


# ---------------------------------------------------------------------------
# Iname splitting
# ---------------------------------------------------------------------------


def split_iname(
    kernel: LoopKernel,
    iname: str,
    factor: int,
    assume_divisible: bool = False,
    lane_name: str = None,
) -> LoopKernel:
    """Split ``iname`` into an outer iname and a lane iname of trip ``factor``.

    The default form preserves the iteration set exactly for any bounds via
    coupled lane bounds.  With ``assume_divisible`` the lane bounds become the
    constant [0, factor) and the outer loop covers only whole batches; the
    caller must start the range at a multiple of ``factor``.
    """
    if not kernel.has_iname(iname):
        raise ValueError(f"unknown iname {iname!r}")
    if factor < 1:
        raise ValueError("split factor must be >= 1")
    iv = kernel.iname(iname)
    if iv.simd_width is not None:
        raise ValueError(f"iname {iname!r} is already simd-tagged")
    if len(iv.lower) != 1 or len(iv.upper) != 1:
        raise ValueError(f"iname {iname!r} has coupled bounds; cannot split again")
    outer = f"{iname}_outer"
    lane = lane_name or f"{iname}_simd"
    for nm in (outer, lane):
        if kernel.has_iname(nm):
            raise ValueError(f"split name {nm!r} already exists")
    lo, hi = iv.lower[0], iv.upper[0]

    if assume_divisible:
        iv_outer = IndexVar(
            outer, (floordiv(lo, factor),), (floordiv(hi, factor),)
        )
        iv_lane = IndexVar(lane, (Lit(0),), (Lit(factor),))
    else:
        iv_outer = IndexVar(
            outer,
            (floordiv(lo, factor),),
            (add(floordiv(sub(hi, 1), factor), 1),),
        )
        iv_lane = IndexVar(
            lane,
            (Lit(0), sub(lo, mul(factor, Var(outer)))),
            (Lit(factor), sub(hi, mul(factor, Var(outer)))),
        )

    for other in kernel.inames:
        if other.name == iname:
            continue
        for b in other.lower + other.upper:
            if expr_depends_on(b, iname):
                raise ValueError(
                    f"cannot split {iname!r}: bound of {other.name!r} references it"
                )

    repl = {iname: add(mul(factor, Var(outer)), Var(lane))}
    new_inames = []
    for other in kernel.inames:
        if other.name == iname:
            new_inames.extend([iv_outer, iv_lane])
        else:
            new_inames.append(other)

    new_stmts = []
    for st in kernel.stmts:
        within = st.within
        if iname in within:
            within = (within - {iname}) | {outer, lane}
        new_stmts.append(
            replace(
                st,
                lhs_index=tuple(substitute(e, repl) for e in st.lhs_index),
                rhs=substitute(st.rhs, repl),
                within=frozenset(within),
            )
        )

    return replace(kernel, inames=tuple(new_inames), stmts=tuple(new_stmts))


# ---------------------------------------------------------------------------
# Race detection and SIMD tagging
# ---------------------------------------------------------------------------


def detect_races(kernel: LoopKernel, lane: str) -> set:
    """Increment statements writing an argument array through a map read that
    depends on the lane iname: these cannot be executed as SIMD lanes."""
    if not kernel.has_iname(lane):
        raise ValueError(f"unknown iname {lane!r}")
    races = set()
    for st in kernel.stmts:
        if st.mode != "inc":
            continue
        try:
            if kernel.array(st.lhs_array).kind != "argument":
                continue
        except KeyError:
            continue
        for idx in st.lhs_index:
            for node in walk(idx):
                if isinstance(node, Read):
                    try:
                        decl = kernel.array(node.array)
                    except KeyError:
                        continue
                    if decl.dtype == "int32" and any(
                        expr_depends_on(e, lane) for e in node.index
                    ):
                        races.add(st.id)
    return races


def _append_lane(e, expanded: set, lane: str):
    """Append the lane index to every access of a lane-expanded array."""
    if isinstance(e, Read):
        idx = tuple(_append_lane(i, expanded, lane) for i in e.index)
        if e.array in expanded:
            idx = idx + (Var(lane),)
        return Read(e.array, idx)
    if isinstance(e, (Lit, Var)):
        return e
    from .ir import Abs as _Abs, BinOp as _BinOp, Neg as _Neg

    if isinstance(e, _BinOp):
        return _BinOp(e.op, _append_lane(e.a, expanded, lane),
                      _append_lane(e.b, expanded, lane))
    if isinstance(e, _Neg):
        return _Neg(_append_lane(e.a, expanded, lane))
    if isinstance(e, _Abs):
        return _Abs(_append_lane(e.a, expanded, lane))
    raise TypeError(f"not an expression: {e!r}")


def tag_simd(kernel: LoopKernel, lane: str, plan: BatchPlan) -> LoopKernel:
    """Tag the lane iname SIMD and vector-expand lane-written temporaries.

    The lane becomes innermost for every statement except the race-listed
    ones, which keep a sequential lane loop in natural position.  Every
    temporary written under the lane gains a trailing lane axis of extent
    ``plan.width`` with unit stride.
    """
    if not kernel.has_iname(lane):
        raise ValueError(f"unknown iname {lane!r}")
    iv = kernel.iname(lane)
    if iv.simd_width is not None:
        raise ValueError(f"iname {lane!r} is already simd-tagged")
    w = plan.width
    if iv.lower != (Lit(0),) or iv.upper != (Lit(w),):
        raise ValueError(
            f"lane iname {lane!r} must have the constant trip count {w}"
        )

    races = detect_races(kernel, lane)

    expanded = set()
    for st in kernel.stmts:
        if lane in st.within:
            try:
                decl = kernel.array(st.lhs_array)
            except KeyError:
                continue
            if decl.kind == "temporary":
                expanded.add(st.lhs_array)

    for st in kernel.stmts:
        if lane in st.within:
            continue
        touched = {st.lhs_array}
        for node in walk(st.rhs):
            if isinstance(node, Read):
                touched.add(node.array)
        if touched & expanded:
            raise ValueError(
                f"statement {st.id!r} accesses an expanded temporary outside "
                f"the lane loop"
            )

    new_arrays = []
    for a in kernel.arrays:
        if a.name in expanded:
            new_arrays.append(
                replace(
                    a,
                    shape=a.shape + (w,),
                    strides=tuple(s * w for s in a.strides) + (1,),
                    align=plan.alignment,
                    lane_expanded=True,
                )
            )
        else:
            new_arrays.append(a)

    new_inames = tuple(
        replace(i, simd_width=w) if i.name == lane else i for i in kernel.inames
    )

    new_stmts = []
    for st in kernel.stmts:
        if lane in st.within:
            lhs_index = tuple(_append_lane(e, expanded, lane) for e in st.lhs_index)
            if st.lhs_array in expanded:
                lhs_index = lhs_index + (Var(lane),)
            new_stmts.append(
                replace(
                    st,
                    lhs_index=lhs_index,
                    rhs=_append_lane(st.rhs, expanded, lane),
                    seq_lane=st.id in races,
                )
            )
        else:
            new_stmts.append(st)

    return replace(
        kernel, inames=new_inames, arrays=tuple(new_arrays), stmts=tuple(new_stmts)
    )


# ---------------------------------------------------------------------------
# Full pipeline
# ---------------------------------------------------------------------------


def vectorize_pipeline(local: LoopKernel, maps: MapsSpec, plan: BatchPlan):
    """Wrapper construction + split + SIMD tagging, with a peeled remainder.

    Returns ``(main, remainder)``.  The main kernel covers whole batches of
    ``plan.width`` cells starting at a width-aligned ``start``; the remainder
    is the plain (unbatched) wrapper, to be run over the leftover range
    [main_extent(...), end).
    """
    wrapper = build_global_wrapper(local, maps)
    main = split_iname(
        wrapper, "n", plan.width, assume_divisible=True, lane_name=plan.lane
    )
    main = tag_simd(main, plan.lane, plan)
    return main, wrapper


def main_extent(start: int, end: int, width: int) -> int:
    """First cell NOT covered by the batched main kernel."""
    if end <= start:
        return start
    return start + (end - start) // width * width
