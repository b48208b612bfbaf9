"""Stable textual dump/parse for loop kernels.

The format is line oriented with a versioned header, one entity per line:

    fevec-ir 1
    kernel helmholtz
    params start end
    iname ip lower(0) upper(6) seq
    iname n_simd lower(0) upper(4) simd(4)
    array A argument real64 shape(12) strides(1) align 8
    stmt s1 assign J00 [] rhs ((coords[0, 0] * -1.0) + coords[1, 0]) \
        within(ip) deps()

Binary operations are always fully parenthesized, negation and absolute
value print as ``neg(x)`` and ``abs(x)``, so parsing reconstructs the exact
expression tree: ``parse(dump(k))`` equals ``k`` structurally.
"""

from __future__ import annotations

import re
from typing import Optional

from .ir import (
    Abs,
    ArrayDecl,
    BinOp,
    IndexVar,
    Lit,
    LoopKernel,
    Neg,
    Read,
    Statement,
    Var,
)

__all__ = ["dump_kernel", "parse_kernel", "IRParseError", "FORMAT_VERSION"]

FORMAT_VERSION = 1


class IRParseError(ValueError):
    def __init__(self, msg: str, line: int, col: int = 0):
        super().__init__(f"line {line}, col {col}: {msg}")
        self.line = line
        self.col = col


# ---------------------------------------------------------------------------
# Dumping
# ---------------------------------------------------------------------------


def _fmt_expr(e) -> str:
    if isinstance(e, Lit):
        return repr(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Read):
        return f"{e.array}[{', '.join(_fmt_expr(i) for i in e.index)}]"
    if isinstance(e, BinOp):
        return f"({_fmt_expr(e.a)} {e.op} {_fmt_expr(e.b)})"
    if isinstance(e, Neg):
        return f"neg({_fmt_expr(e.a)})"
    if isinstance(e, Abs):
        return f"abs({_fmt_expr(e.a)})"
    raise TypeError(f"not an expression: {e!r}")


def _fmt_exprs(exprs) -> str:
    return ", ".join(_fmt_expr(e) for e in exprs)


def dump_kernel(kernel: LoopKernel) -> str:
    lines = [f"fevec-ir {FORMAT_VERSION}", f"kernel {kernel.name}"]
    lines.append("params" + "".join(f" {p}" for p in kernel.params))
    for iv in kernel.inames:
        tag = "seq" if iv.simd_width is None else f"simd({iv.simd_width})"
        lines.append(
            f"iname {iv.name} lower({_fmt_exprs(iv.lower)}) "
            f"upper({_fmt_exprs(iv.upper)}) {tag}"
        )
    for a in kernel.arrays:
        shape = ", ".join("?" if s is None else str(s) for s in a.shape)
        strides = ", ".join(str(s) for s in a.strides)
        parts = [
            f"array {a.name} {a.kind} {a.dtype} shape({shape}) "
            f"strides({strides}) align {a.align}"
        ]
        if a.lane_expanded:
            parts.append("lane-expanded")
        if a.data is not None:
            parts.append("data(" + ", ".join(repr(v) for v in a.data) + ")")
        lines.append(" ".join(parts))
    for st in kernel.stmts:
        parts = [
            f"stmt {st.id} {st.mode} {st.lhs_array} "
            f"[{_fmt_exprs(st.lhs_index)}] rhs {_fmt_expr(st.rhs)}",
            "within(" + " ".join(sorted(st.within)) + ")",
            "deps(" + " ".join(sorted(st.depends_on)) + ")",
        ]
        if st.seq_lane:
            parts.append("seq-lane")
        lines.append(" ".join(parts))
    lines.append("end")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>-?(?:\d+\.\d*(?:[eE][-+]?\d+)?|\d+[eE][-+]?\d+|\.\d+|\d+))"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9-]*)"
    r"|(?P<punct>//|[()\[\],?+\-*/]))"
)


class _Line:
    """Token cursor over one physical line."""

    def __init__(self, text: str, lineno: int):
        self.text = text
        self.lineno = lineno
        self.tokens = []  # (kind, value, col)
        pos = 0
        while pos < len(text):
            m = _TOKEN_RE.match(text, pos)
            if m is None or m.end() == pos:
                stripped = text[pos:].lstrip()
                if not stripped:
                    break
                col = len(text) - len(stripped) + 1
                raise IRParseError(
                    f"unexpected character {stripped[0]!r}", lineno, col
                )
            kind = m.lastgroup
            self.tokens.append((kind, m.group(kind), m.start(kind) + 1))
            pos = m.end()
        self.i = 0

    def peek(self) -> Optional[tuple]:
        return self.tokens[self.i] if self.i < len(self.tokens) else None

    @property
    def col(self) -> int:
        t = self.peek()
        return t[2] if t is not None else len(self.text) + 1

    def next(self, what: str = "token") -> tuple:
        t = self.peek()
        if t is None:
            raise IRParseError(f"expected {what}, got end of line",
                               self.lineno, self.col)
        self.i += 1
        return t

    def expect(self, value: str) -> None:
        kind, got, col = self.next(repr(value))
        if got != value:
            raise IRParseError(f"expected {value!r}, got {got!r}",
                               self.lineno, col)

    def expect_name(self, what: str = "a name") -> str:
        kind, got, col = self.next(what)
        if kind != "name":
            raise IRParseError(f"expected {what}, got {got!r}", self.lineno, col)
        return got

    def done(self) -> None:
        t = self.peek()
        if t is not None:
            raise IRParseError(f"trailing input {t[1]!r}", self.lineno, t[2])


def _parse_number(tok: str):
    if "." in tok or "e" in tok or "E" in tok:
        return float(tok)
    return int(tok)


_BINOPS = {"+", "-", "*", "/", "//"}


def _parse_expr(ln: _Line):
    kind, tok, col = ln.next("an expression")
    if kind == "num":
        return Lit(_parse_number(tok))
    if tok == "(":
        a = _parse_expr(ln)
        okind, op, ocol = ln.next("a binary operator")
        if op not in _BINOPS:
            raise IRParseError(f"expected a binary operator, got {op!r}",
                               ln.lineno, ocol)
        b = _parse_expr(ln)
        ln.expect(")")
        return BinOp(op, a, b)
    if kind == "name":
        nxt = ln.peek()
        if tok in ("neg", "abs") and nxt is not None and nxt[1] == "(":
            ln.expect("(")
            inner = _parse_expr(ln)
            ln.expect(")")
            return Neg(inner) if tok == "neg" else Abs(inner)
        if nxt is not None and nxt[1] == "[":
            ln.expect("[")
            index = _parse_expr_list(ln, "]")
            return Read(tok, index)
        return Var(tok)
    raise IRParseError(f"expected an expression, got {tok!r}", ln.lineno, col)


def _parse_expr_list(ln: _Line, close: str) -> tuple:
    out = []
    t = ln.peek()
    if t is not None and t[1] == close:
        ln.next()
        return ()
    while True:
        out.append(_parse_expr(ln))
        kind, tok, col = ln.next(f"{close!r} or ','")
        if tok == close:
            return tuple(out)
        if tok != ",":
            raise IRParseError(f"expected {close!r} or ',', got {tok!r}",
                               ln.lineno, col)


def _parse_group(ln: _Line, keyword: str) -> tuple:
    kind, tok, col = ln.next(keyword)
    if tok != keyword:
        raise IRParseError(f"expected {keyword!r}, got {tok!r}", ln.lineno, col)
    ln.expect("(")
    return _parse_expr_list(ln, ")")


def _parse_name_group(ln: _Line) -> tuple:
    ln.expect("(")
    names = []
    while True:
        kind, tok, col = ln.next("a name or ')'")
        if tok == ")":
            return tuple(names)
        if kind != "name":
            raise IRParseError(f"expected a name, got {tok!r}", ln.lineno, col)
        names.append(tok)


def _parse_iname(ln: _Line) -> IndexVar:
    name = ln.expect_name("iname name")
    lower = _parse_group(ln, "lower")
    upper = _parse_group(ln, "upper")
    kind, tag, col = ln.next("'seq' or 'simd'")
    width = None
    if tag == "simd":
        ln.expect("(")
        wkind, wtok, wcol = ln.next("a width")
        if wkind != "num":
            raise IRParseError(f"expected a width, got {wtok!r}", ln.lineno, wcol)
        width = int(wtok)
        ln.expect(")")
    elif tag != "seq":
        raise IRParseError(f"expected 'seq' or 'simd', got {tag!r}",
                           ln.lineno, col)
    ln.done()
    return IndexVar(name, lower, upper, width)


def _parse_int_group(ln: _Line, allow_unknown=False) -> tuple:
    ln.expect("(")
    out = []
    while True:
        kind, tok, col = ln.next("an integer or ')'")
        if tok == ")":
            return tuple(out)
        if tok == ",":
            continue
        if tok == "?" and allow_unknown:
            out.append(None)
            continue
        if kind != "num" or not tok.lstrip("-").isdigit():
            raise IRParseError(f"expected an integer, got {tok!r}",
                               ln.lineno, col)
        out.append(int(tok))


def _parse_array(ln: _Line) -> ArrayDecl:
    name = ln.expect_name("array name")
    akind = ln.expect_name("array kind")
    dtype = ln.expect_name("dtype")
    kw = ln.expect_name("'shape'")
    if kw != "shape":
        raise IRParseError(f"expected 'shape', got {kw!r}", ln.lineno, ln.col)
    shape = _parse_int_group(ln, allow_unknown=True)
    kw = ln.expect_name("'strides'")
    if kw != "strides":
        raise IRParseError(f"expected 'strides', got {kw!r}", ln.lineno, ln.col)
    strides = _parse_int_group(ln)
    kw = ln.expect_name("'align'")
    if kw != "align":
        raise IRParseError(f"expected 'align', got {kw!r}", ln.lineno, ln.col)
    akind_tok, atok, acol = ln.next("an alignment")
    if akind_tok != "num":
        raise IRParseError(f"expected an alignment, got {atok!r}",
                           ln.lineno, acol)
    align = int(atok)
    lane_expanded = False
    data = None
    while ln.peek() is not None:
        kind, tok, col = ln.next()
        if tok == "lane-expanded":
            lane_expanded = True
        elif tok == "data":
            ln.expect("(")
            vals = []
            while True:
                k2, t2, c2 = ln.next("a number or ')'")
                if t2 == ")":
                    break
                if t2 == ",":
                    continue
                if k2 != "num":
                    raise IRParseError(f"expected a number, got {t2!r}",
                                       ln.lineno, c2)
                vals.append(_parse_number(t2))
            data = tuple(vals)
        else:
            raise IRParseError(f"unexpected token {tok!r}", ln.lineno, col)
    try:
        return ArrayDecl(name, akind, dtype, shape, strides, align, data,
                         lane_expanded)
    except ValueError as e:
        raise IRParseError(str(e), ln.lineno, 1) from None


def _parse_stmt(ln: _Line) -> Statement:
    sid = ln.expect_name("statement id")
    mode = ln.expect_name("statement mode")
    if mode not in ("assign", "inc"):
        raise IRParseError(f"expected 'assign' or 'inc', got {mode!r}",
                           ln.lineno, ln.col)
    lhs = ln.expect_name("lhs array")
    ln.expect("[")
    lhs_index = _parse_expr_list(ln, "]")
    kw = ln.expect_name("'rhs'")
    if kw != "rhs":
        raise IRParseError(f"expected 'rhs', got {kw!r}", ln.lineno, ln.col)
    rhs = _parse_expr(ln)
    kw = ln.expect_name("'within'")
    if kw != "within":
        raise IRParseError(f"expected 'within', got {kw!r}", ln.lineno, ln.col)
    within = frozenset(_parse_name_group(ln))
    kw = ln.expect_name("'deps'")
    if kw != "deps":
        raise IRParseError(f"expected 'deps', got {kw!r}", ln.lineno, ln.col)
    deps = frozenset(_parse_name_group(ln))
    seq_lane = False
    if ln.peek() is not None:
        kind, tok, col = ln.next()
        if tok != "seq-lane":
            raise IRParseError(f"unexpected token {tok!r}", ln.lineno, col)
        seq_lane = True
    ln.done()
    return Statement(sid, lhs, lhs_index, mode, rhs, within, deps, seq_lane)


def parse_kernel(text: str) -> LoopKernel:
    """Parse a kernel dumped by :func:`dump_kernel`.

    Raises :class:`IRParseError` with line/column information on malformed
    input; an unknown leading tag is reported by name.
    """
    raw = text.splitlines()
    lines = [
        (i + 1, s) for i, s in enumerate(raw)
        if s.strip() and not s.lstrip().startswith("#")
    ]
    if not lines:
        raise IRParseError("empty input", 1)
    lineno, header = lines[0]
    m = re.fullmatch(r"fevec-ir\s+(\d+)", header.strip())
    if m is None:
        raise IRParseError("missing 'fevec-ir <version>' header", lineno)
    version = int(m.group(1))
    if version != FORMAT_VERSION:
        raise IRParseError(
            f"unsupported format version {version} (expected {FORMAT_VERSION})",
            lineno,
        )

    name = None
    params = ()
    inames, arrays, stmts = [], [], []
    saw_end = False
    for lineno, s in lines[1:]:
        if saw_end:
            raise IRParseError("content after 'end'", lineno)
        ln = _Line(s, lineno)
        kind, tag, col = ln.next("a tag")
        if tag == "kernel":
            name = ln.expect_name("kernel name")
            ln.done()
        elif tag == "params":
            ps = []
            while ln.peek() is not None:
                ps.append(ln.expect_name("a parameter name"))
            params = tuple(ps)
        elif tag == "iname":
            inames.append(_parse_iname(ln))
        elif tag == "array":
            arrays.append(_parse_array(ln))
        elif tag == "stmt":
            stmts.append(_parse_stmt(ln))
        elif tag == "end":
            ln.done()
            saw_end = True
        else:
            raise IRParseError(f"unknown tag {tag!r}", lineno, col)
    if name is None:
        raise IRParseError("no 'kernel' line", lines[-1][0])
    if not saw_end:
        raise IRParseError("missing 'end' line", lines[-1][0])
    return LoopKernel(name, params, tuple(inames), tuple(arrays), tuple(stmts))
