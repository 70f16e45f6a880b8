"""Textual pointer IR: parsing, CFGs, call graph, local resolution.

The language is three-address statements over named variables, with one
level of pointer indirection per statement, field access in arrow (through
a pointer) and dot (direct) forms, heap allocation, function values, and
calls.  Programs declare globals up front; procedures declare locals on
their first lines.

Locals and parameters are renamed to ``proc::name`` during parsing so that
procedure summaries can flow between procedures without capture.  Locals
whose address is taken are additionally marked escaped; they behave like
globals that are never strongly updated.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum, auto
from typing import Iterable, Iterator, Optional


class IrError(Exception):
    """Malformed input program."""


class Kind(Enum):
    ADDR_OF = auto()  # x = &y
    COPY = auto()  # x = y
    LOAD = auto()  # x = *y
    STORE = auto()  # *x = y
    FIELD_LOAD = auto()  # x = y->f   or   x = y.f (direct)
    FIELD_STORE = auto()  # x->f = y   or   x.f = y (direct)
    ALLOC = auto()  # x = alloc
    FN_ADDR = auto()  # x = &fn g
    ARITH = auto()  # x = arith y
    CALL = auto()  # call g(...) / call *fp(...) / x = call ...
    GOTO = auto()
    BR = auto()
    RET = auto()


@dataclass
class Stmt:
    kind: Kind
    line: int
    lhs: Optional[str] = None  # written variable (or base of *x / x->f / x.f)
    rhs: Optional[str] = None  # read variable (or base of y->f / y.f)
    rhs_addr: bool = False  # store of an address: *x = &y
    fld: Optional[str] = None
    through_pointer: bool = False  # arrow (True) vs dot (False) field access
    callee: Optional[str] = None  # direct callee or fp variable
    indirect: bool = False
    args: tuple[str, ...] = ()
    receiver: Optional[str] = None  # x = call ...
    labels: tuple[str, ...] = ()  # goto/br targets
    cond: Optional[str] = None  # br condition variable (never interpreted)
    site: Optional[str] = None  # allocation site id, h<line>

    def reads(self) -> list[str]:
        """Variable names this statement reads (not written)."""
        out = []
        if self.kind in (Kind.COPY, Kind.LOAD, Kind.ARITH):
            out.append(self.rhs)
        elif self.kind is Kind.ADDR_OF:
            out.append(self.rhs)
        elif self.kind is Kind.STORE:
            out.extend([self.lhs, self.rhs])
        elif self.kind is Kind.FIELD_LOAD:
            out.append(self.rhs)
        elif self.kind is Kind.FIELD_STORE:
            out.extend([self.lhs, self.rhs])
        elif self.kind is Kind.CALL:
            out.extend(self.args)
            if self.indirect:
                out.append(self.callee)
        elif self.kind is Kind.BR:
            out.append(self.cond)
        elif self.kind is Kind.RET and self.rhs:
            out.append(self.rhs)
        return [v for v in out if v is not None]

    def render(self) -> str:  # pragma: no cover
        k = self.kind
        if k is Kind.ADDR_OF:
            return f"{self.lhs} = &{self.rhs}"
        if k is Kind.COPY:
            return f"{self.lhs} = {self.rhs}"
        if k is Kind.LOAD:
            return f"{self.lhs} = *{self.rhs}"
        if k is Kind.STORE:
            amp = "&" if self.rhs_addr else ""
            return f"*{self.lhs} = {amp}{self.rhs}"
        if k is Kind.FIELD_LOAD:
            sep = "->" if self.through_pointer else "."
            return f"{self.lhs} = {self.rhs}{sep}{self.fld}"
        if k is Kind.FIELD_STORE:
            sep = "->" if self.through_pointer else "."
            return f"{self.lhs}{sep}{self.fld} = {self.rhs}"
        if k is Kind.ALLOC:
            return f"{self.lhs} = alloc"
        if k is Kind.FN_ADDR:
            return f"{self.lhs} = &fn {self.callee}"
        if k is Kind.ARITH:
            return f"{self.lhs} = arith {self.rhs}"
        if k is Kind.CALL:
            star = "*" if self.indirect else ""
            head = f"{self.receiver} = call " if self.receiver else "call "
            return f"{head}{star}{self.callee}({', '.join(self.args)})"
        if k is Kind.GOTO:
            return f"goto {self.labels[0]}"
        if k is Kind.BR:
            return f"br {self.cond} {self.labels[0]} {self.labels[1]}"
        return f"ret {self.rhs}" if self.rhs else "ret"


@dataclass
class Block:
    label: str
    stmts: list[Stmt]


@dataclass
class Cfg:
    blocks: dict[str, Block]
    order: list[str]  # declaration order of labels
    entry: str
    # statement list in reverse post order; rpo index is the program point
    # just before the statement, and len(stmts) is the End point
    stmts: list[Stmt] = field(default_factory=list)
    succ: dict[int, frozenset[int]] = field(default_factory=dict)
    pred: dict[int, frozenset[int]] = field(default_factory=dict)

    @property
    def end_point(self) -> int:
        return len(self.stmts)


@dataclass
class Proc:
    name: str
    params: list[str]  # qualified names, in order
    locals_: list[str]  # qualified names
    escaped: set[str]  # qualified names of address-taken locals
    cfg: Cfg

    @property
    def ret_var(self) -> str:
        return f"ret${self.name}"


@dataclass
class Program:
    globals_: list[str]
    funcs: dict[str, Proc]
    fields: set[str]
    sites: set[str]
    source: str = ""

    def proc(self, name: str) -> Proc:
        return self.funcs[name]


# ----------------------------------------------------------------------------
# Tokenizer
# ----------------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<comment>\#[^\n]*)
  | (?P<arrow>->)
  | (?P<id>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<punct>[&*;,(){}:.=])
    """,
    re.VERBOSE,
)

_KEYWORDS = {
    "global", "func", "local", "alloc", "arith", "call", "goto", "br", "ret", "fn",
}


@dataclass
class Tok:
    text: str
    line: int
    col: int


def _tokenize(src: str) -> list[Tok]:
    toks: list[Tok] = []
    line, col = 1, 1
    pos = 0
    while pos < len(src):
        m = _TOKEN_RE.match(src, pos)
        if not m:
            raise IrError(f"line {line}:{col}: unexpected character {src[pos]!r}")
        text = m.group(0)
        if m.lastgroup not in ("ws", "comment"):
            toks.append(Tok(text, line, col))
        newlines = text.count("\n")
        if newlines:
            line += newlines
            col = len(text) - text.rfind("\n")
        else:
            col += len(text)
        pos = m.end()
    return toks


class _Parser:
    def __init__(self, src: str) -> None:
        self.toks = _tokenize(src)
        self.i = 0

    def peek(self, ahead: int = 0) -> Optional[Tok]:
        j = self.i + ahead
        return self.toks[j] if j < len(self.toks) else None

    def next(self) -> Tok:
        t = self.peek()
        if t is None:
            raise IrError("unexpected end of input")
        self.i += 1
        return t

    def expect(self, text: str) -> Tok:
        t = self.next()
        if t.text != text:
            raise IrError(f"line {t.line}:{t.col}: expected {text!r}, found {t.text!r}")
        return t

    def ident(self) -> Tok:
        t = self.next()
        if not re.fullmatch(r"[A-Za-z_][A-Za-z0-9_]*", t.text) or t.text in _KEYWORDS:
            raise IrError(f"line {t.line}:{t.col}: expected identifier, found {t.text!r}")
        return t

    def at(self, text: str) -> bool:
        t = self.peek()
        return t is not None and t.text == text

    def idlist(self) -> list[str]:
        names = [self.ident().text]
        while self.at(","):
            self.next()
            names.append(self.ident().text)
        return names

    # -- grammar --------------------------------------------------------------

    def program(self) -> Program:
        globals_: list[str] = []
        while self.at("global"):
            self.next()
            globals_.extend(self.idlist())
            self.expect(";")
        funcs: dict[str, Proc] = {}
        while self.peek() is not None:
            proc = self.func()
            if proc.name in funcs:
                raise IrError(f"duplicate function {proc.name!r}")
            funcs[proc.name] = proc
        if "main" not in funcs:
            raise IrError("program has no main function")
        prog = Program(globals_, funcs, set(), set())
        _finish(prog)
        return prog

    def func(self) -> Proc:
        self.expect("func")
        name = self.ident().text
        self.expect("(")
        params: list[str] = []
        if not self.at(")"):
            params = self.idlist()
        self.expect(")")
        self.expect("{")
        locals_: list[str] = []
        # local declarations come before the first label
        while self.at("local"):
            self.next()
            locals_.extend(self.idlist())
            self.expect(";")
        blocks: dict[str, Block] = {}
        order: list[str] = []
        while not self.at("}"):
            label = self.ident().text
            self.expect(":")
            if label in blocks:
                raise IrError(f"duplicate label {label!r} in {name}")
            stmts: list[Stmt] = []
            while not self.at("}") and not self._at_label():
                stmts.append(self.stmt())
            blocks[label] = Block(label, stmts)
            order.append(label)
        self.expect("}")
        if not order:
            raise IrError(f"function {name} has no blocks")
        cfg = Cfg(blocks, order, entry=order[0])
        return Proc(name, params, locals_, set(), cfg)

    def _at_label(self) -> bool:
        t0, t1 = self.peek(), self.peek(1)
        return (
            t0 is not None
            and t1 is not None
            and t1.text == ":"
            and re.fullmatch(r"[A-Za-z_][A-Za-z0-9_]*", t0.text) is not None
            and t0.text not in _KEYWORDS
        )

    def stmt(self) -> Stmt:
        t = self.peek()
        assert t is not None
        line = t.line

        if self.at("*"):
            self.next()
            lhs = self.ident().text
            self.expect("=")
            rhs_addr = False
            if self.at("&"):
                self.next()
                rhs_addr = True
            rhs = self.ident().text
            self.expect(";")
            return Stmt(Kind.STORE, line, lhs=lhs, rhs=rhs, rhs_addr=rhs_addr)

        if self.at("goto"):
            self.next()
            lab = self.ident().text
            self.expect(";")
            return Stmt(Kind.GOTO, line, labels=(lab,))

        if self.at("br"):
            self.next()
            cond = self.ident().text
            l1 = self.ident().text
            l2 = self.ident().text
            self.expect(";")
            return Stmt(Kind.BR, line, cond=cond, labels=(l1, l2))

        if self.at("ret"):
            self.next()
            rhs = None
            if not self.at(";"):
                rhs = self.ident().text
            self.expect(";")
            return Stmt(Kind.RET, line, rhs=rhs)

        if self.at("call"):
            return self._call(line, receiver=None)

        lhs = self.ident().text

        if self.at("."):  # x . f = y
            self.next()
            fld = self.ident().text
            self.expect("=")
            rhs = self.ident().text
            self.expect(";")
            return Stmt(Kind.FIELD_STORE, line, lhs=lhs, rhs=rhs, fld=fld,
                        through_pointer=False)
        if self.at("->"):  # x -> f = y
            self.next()
            fld = self.ident().text
            self.expect("=")
            rhs = self.ident().text
            self.expect(";")
            return Stmt(Kind.FIELD_STORE, line, lhs=lhs, rhs=rhs, fld=fld,
                        through_pointer=True)

        self.expect("=")

        if self.at("&"):
            self.next()
            if self.at("fn"):
                self.next()
                callee = self.ident().text
                self.expect(";")
                return Stmt(Kind.FN_ADDR, line, lhs=lhs, callee=callee)
            rhs = self.ident().text
            self.expect(";")
            return Stmt(Kind.ADDR_OF, line, lhs=lhs, rhs=rhs)

        if self.at("*"):
            self.next()
            rhs = self.ident().text
            self.expect(";")
            return Stmt(Kind.LOAD, line, lhs=lhs, rhs=rhs)

        if self.at("alloc"):
            self.next()
            self.expect(";")
            return Stmt(Kind.ALLOC, line, lhs=lhs, site=f"h{line}")

        if self.at("arith"):
            self.next()
            rhs = self.ident().text
            self.expect(";")
            return Stmt(Kind.ARITH, line, lhs=lhs, rhs=rhs)

        if self.at("call"):
            return self._call(line, receiver=lhs)

        rhs = self.ident().text
        if self.at("."):  # x = y . f
            self.next()
            fld = self.ident().text
            self.expect(";")
            return Stmt(Kind.FIELD_LOAD, line, lhs=lhs, rhs=rhs, fld=fld,
                        through_pointer=False)
        if self.at("->"):  # x = y -> f
            self.next()
            fld = self.ident().text
            self.expect(";")
            return Stmt(Kind.FIELD_LOAD, line, lhs=lhs, rhs=rhs, fld=fld,
                        through_pointer=True)
        self.expect(";")
        return Stmt(Kind.COPY, line, lhs=lhs, rhs=rhs)

    def _call(self, line: int, receiver: Optional[str]) -> Stmt:
        self.expect("call")
        indirect = False
        if self.at("*"):
            indirect = True
            self.next()
        callee = self.ident().text
        self.expect("(")
        args: list[str] = []
        if not self.at(")"):
            args = self.idlist()
        self.expect(")")
        self.expect(";")
        return Stmt(Kind.CALL, line, callee=callee, indirect=indirect,
                    args=tuple(args), receiver=receiver)


# ----------------------------------------------------------------------------
# Program finishing: qualification, validation, CFG wiring
# ----------------------------------------------------------------------------


def _qualify(prog: Program) -> None:
    """Rename locals and params of each proc to proc::name and find escapes."""
    for proc in prog.funcs.values():
        scope = set(proc.params) | set(proc.locals_)
        dup = scope & set(prog.globals_)
        if dup:
            raise IrError(f"{proc.name}: locals shadow globals: {sorted(dup)}")
        if len(scope) != len(proc.params) + len(proc.locals_):
            raise IrError(f"{proc.name}: duplicate local/param names")

        def q(name: Optional[str]) -> Optional[str]:
            if name in scope:
                return f"{proc.name}::{name}"
            return name

        for block in proc.cfg.blocks.values():
            for s in block.stmts:
                s.lhs = q(s.lhs)
                s.rhs = q(s.rhs)
                s.cond = q(s.cond)
                s.args = tuple(q(a) for a in s.args)
                s.receiver = q(s.receiver)
                if s.kind is Kind.CALL and s.indirect:
                    s.callee = q(s.callee)
        proc.params = [f"{proc.name}::{p}" for p in proc.params]
        proc.locals_ = [f"{proc.name}::{v}" for v in proc.locals_]


def _validate(prog: Program) -> None:
    declared = set(prog.globals_)
    for proc in prog.funcs.values():
        declared |= set(proc.params) | set(proc.locals_)
    for proc in prog.funcs.values():
        for block in proc.cfg.blocks.values():
            for s in block.stmts:
                if s.kind is Kind.CALL and not s.indirect:
                    if s.callee not in prog.funcs:
                        raise IrError(
                            f"line {s.line}: call to unknown function {s.callee!r}")
                if s.kind is Kind.FN_ADDR and s.callee not in prog.funcs:
                    raise IrError(
                        f"line {s.line}: &fn of unknown function {s.callee!r}")
                names = list(s.reads())
                if s.kind is not Kind.CALL and s.lhs is not None:
                    names.append(s.lhs)
                if s.receiver is not None:
                    names.append(s.receiver)
                if s.kind is Kind.CALL and s.indirect:
                    names.append(s.callee)
                for v in names:
                    if v not in declared:
                        raise IrError(
                            f"line {s.line}: undeclared identifier {v!r}")
                if s.kind is Kind.ALLOC:
                    prog.sites.add(s.site)
                if s.fld is not None:
                    prog.fields.add(s.fld)
        for s in _stmts_of(proc):
            takes_addr = s.kind is Kind.ADDR_OF or (
                s.kind is Kind.STORE and s.rhs_addr
            )
            if takes_addr and "::" in (s.rhs or ""):
                proc_name = s.rhs.split("::", 1)[0]
                prog.funcs[proc_name].escaped.add(s.rhs)


def _stmts_of(proc: Proc) -> Iterator[Stmt]:
    for label in proc.cfg.order:
        yield from proc.cfg.blocks[label].stmts


def _wire_cfg(proc: Proc) -> None:
    """Compute statement-level reverse post order and successor maps."""
    cfg = proc.cfg
    blocks = cfg.blocks
    for label in cfg.order:
        for s in blocks[label].stmts:
            for target in s.labels:
                if target not in blocks:
                    raise IrError(
                        f"line {s.line}: undefined label {target!r} in {proc.name}")

    # block-level successors, with fallthrough to the next declared block
    bsucc: dict[str, list[str]] = {}
    for idx, label in enumerate(cfg.order):
        stmts = blocks[label].stmts
        term = stmts[-1] if stmts else None
        if term is not None and term.kind is Kind.GOTO:
            bsucc[label] = [term.labels[0]]
        elif term is not None and term.kind is Kind.BR:
            bsucc[label] = list(dict.fromkeys(term.labels))
        elif term is not None and term.kind is Kind.RET:
            bsucc[label] = []
        elif idx + 1 < len(cfg.order):
            bsucc[label] = [cfg.order[idx + 1]]
        else:
            bsucc[label] = []

    # depth-first post order over blocks, then reverse (iterative, so deep
    # chains of blocks cannot overflow the interpreter stack)
    seen: set[str] = set()
    post: list[str] = []
    stack: list[tuple[str, int]] = [(cfg.entry, 0)]
    seen.add(cfg.entry)
    while stack:
        label, idx = stack.pop()
        succs = bsucc[label]
        if idx < len(succs):
            stack.append((label, idx + 1))
            nxt = succs[idx]
            if nxt not in seen:
                seen.add(nxt)
                stack.append((nxt, 0))
        else:
            post.append(label)
    rpo_blocks = [b for b in reversed(post)]

    stmts: list[Stmt] = []
    starts: dict[str, int] = {}
    for label in rpo_blocks:
        starts[label] = len(stmts)
        stmts.extend(blocks[label].stmts)
    cfg.stmts = stmts
    end = len(stmts)

    # the point a jump to a block lands on, skipping empty blocks by their
    # declaration-order fallthrough
    first_point: dict[str, int] = {}

    def landing(label: str, trail: tuple[str, ...] = ()) -> int:
        if label in first_point:
            return first_point[label]
        if label in trail:
            raise IrError(f"empty-block cycle at label {label!r}")
        if blocks[label].stmts:
            pt = starts[label]
        else:
            idx = cfg.order.index(label)
            if idx + 1 < len(cfg.order):
                pt = landing(cfg.order[idx + 1], trail + (label,))
            else:
                pt = end
        first_point[label] = pt
        return pt
    succ: dict[int, set[int]] = {i: set() for i in range(end)}
    pos = 0
    reaches_end = False
    for label in rpo_blocks:
        n = len(blocks[label].stmts)
        for k in range(n):
            s = stmts[pos + k]
            last = k == n - 1
            if s.kind is Kind.GOTO:
                succ[pos + k].add(landing(s.labels[0]))
            elif s.kind is Kind.BR:
                for t in s.labels:
                    succ[pos + k].add(landing(t))
            elif s.kind is Kind.RET:
                succ[pos + k].add(end)
                reaches_end = True
            elif last:
                nexts = bsucc[label]
                if not nexts:
                    succ[pos + k].add(end)  # fell off the last block
                    reaches_end = True
                for t in nexts:
                    succ[pos + k].add(landing(t))
            else:
                succ[pos + k].add(pos + k + 1)
        pos += n
    if end in {landing(t) for t in rpo_blocks if not blocks[t].stmts}:
        reaches_end = True

    if not stmts:
        reaches_end = True
    if not reaches_end:
        raise IrError(f"{proc.name}: no path reaches the procedure exit")

    cfg.succ = {i: frozenset(v) for i, v in succ.items()}
    pred: dict[int, set[int]] = {i: set() for i in range(end + 1)}
    for i, outs in succ.items():
        for o in outs:
            pred[o].add(i)
    cfg.pred = {i: frozenset(v) for i, v in pred.items()}


def _finish(prog: Program) -> None:
    _qualify(prog)
    _validate(prog)
    for proc in prog.funcs.values():
        _wire_cfg(proc)


def parse(src: str) -> Program:
    p = _Parser(src)
    prog = p.program()
    prog.source = src
    return prog


def parse_file(path: str) -> Program:
    with open(path, "r", encoding="utf-8") as fh:
        return parse(fh.read())


# ----------------------------------------------------------------------------
# Call graph
# ----------------------------------------------------------------------------


@dataclass
class CallGraph:
    direct: dict[tuple[str, int], str]  # (proc, rpo) -> callee
    indirect: dict[tuple[str, int], str]  # (proc, rpo) -> fp variable


def build_call_graph(prog: Program) -> CallGraph:
    direct: dict[tuple[str, int], str] = {}
    indirect: dict[tuple[str, int], str] = {}
    for proc in prog.funcs.values():
        for i, s in enumerate(proc.cfg.stmts):
            if s.kind is not Kind.CALL:
                continue
            if s.indirect:
                indirect[(proc.name, i)] = s.callee
            else:
                direct[(proc.name, i)] = s.callee
    return CallGraph(direct, indirect)


def callees_transitive(prog: Program, root: str) -> set[str]:
    """Names of procedures reachable from root through direct call edges.

    Indirect sites contribute every function whose address is taken
    anywhere, a deliberately coarse overapproximation.
    """
    taken = {
        s.callee
        for proc in prog.funcs.values()
        for s in proc.cfg.stmts
        if s.kind is Kind.FN_ADDR
    }
    out: set[str] = set()
    work = [root]
    while work:
        name = work.pop()
        if name in out:
            continue
        out.add(name)
        for s in prog.funcs[name].cfg.stmts:
            if s.kind is Kind.CALL:
                if s.indirect:
                    work.extend(t for t in taken if t not in out)
                else:
                    work.append(s.callee)
    return out


# ----------------------------------------------------------------------------
# Local definition resolution
# ----------------------------------------------------------------------------


def _dominators(cfg: Cfg) -> dict[int, set[int]]:
    """Statement-level dominator sets by the classic iterative scheme."""
    points = list(range(len(cfg.stmts)))
    if not points:
        return {}
    all_pts = set(points)
    dom = {i: set(all_pts) for i in points}
    entry_pt = 0
    dom[entry_pt] = {entry_pt}
    changed = True
    while changed:
        changed = False
        for i in points:
            if i == entry_pt:
                continue
            preds = [p for p in cfg.pred.get(i, ()) if p < len(cfg.stmts)]
            if preds:
                new = set.intersection(*(dom[p] for p in preds)) | {i}
            else:
                new = {i}
            if new != dom[i]:
                dom[i] = new
                changed = True
    return dom


def resolve_locals(prog: Program, proc: Proc) -> Proc:
    """Substitute single-definition simple locals into their uses.

    A non-escaped local defined exactly once, by a copy or an address-of,
    with every use dominated by the definition, is folded away.  Anything
    more complicated is left alone.  Substituting an address-of is only
    done where the result is still a legal statement form.
    """
    cfg = proc.cfg
    dom = _dominators(cfg)
    changed = True
    while changed:
        changed = False
        defs: dict[str, list[int]] = {}
        uses: dict[str, list[int]] = {}
        for i, s in enumerate(cfg.stmts):
            written = _written_var(s)
            if written is not None:
                defs.setdefault(written, []).append(i)
            for v in _used_vars(s):
                uses.setdefault(v, []).append(i)
        for v in list(proc.locals_):
            if v in proc.escaped or v in proc.params:
                continue
            dv = defs.get(v, [])
            if len(dv) != 1:
                continue
            d = dv[0]
            stmt = cfg.stmts[d]
            if stmt.kind not in (Kind.COPY, Kind.ADDR_OF):
                continue
            use_sites = [u for u in uses.get(v, []) if u != d]
            if any(d not in dom.get(u, set()) for u in use_sites):
                continue
            if stmt.kind is Kind.COPY:
                ok = all(_subst_copy(cfg.stmts[u], v, stmt.rhs) for u in use_sites)
            else:
                ok = all(_can_subst_addr(cfg.stmts[u], v) for u in use_sites)
                if ok:
                    for u in use_sites:
                        _subst_addr(cfg.stmts[u], v, stmt.rhs)
            if not ok:
                continue
            _drop_stmt(proc, d)
            proc.locals_.remove(v)
            changed = True
            break  # indices shifted, recompute
    return proc


def _written_var(s: Stmt) -> Optional[str]:
    if s.kind in (Kind.ADDR_OF, Kind.COPY, Kind.LOAD, Kind.ALLOC,
                  Kind.FN_ADDR, Kind.ARITH, Kind.FIELD_LOAD):
        return s.lhs
    if s.kind is Kind.CALL:
        return s.receiver
    return None


def _used_vars(s: Stmt) -> list[str]:
    out = list(s.reads())
    if s.kind in (Kind.STORE, Kind.FIELD_STORE):
        pass  # reads() already includes the base
    return out


def _subst_copy(s: Stmt, old: str, new: str) -> bool:
    reads_value = not (
        s.kind is Kind.ADDR_OF or (s.kind is Kind.STORE and s.rhs_addr)
    )
    if s.rhs == old and reads_value:
        s.rhs = new
    if s.lhs == old and s.kind in (Kind.STORE, Kind.FIELD_STORE):
        s.lhs = new
    if s.cond == old:
        s.cond = new
    if s.callee == old and s.kind is Kind.CALL and s.indirect:
        s.callee = new
    s.args = tuple(new if a == old else a for a in s.args)
    return True


def _can_subst_addr(s: Stmt, v: str) -> bool:
    """Is replacing v by &target expressible at every use in s?"""
    if s.kind is Kind.COPY and s.rhs == v:
        return True
    if s.kind is Kind.LOAD and s.rhs == v:
        return True
    if s.kind is Kind.STORE and s.lhs == v and s.rhs != v:
        return True
    if s.kind is Kind.STORE and s.rhs == v and not s.rhs_addr and s.lhs != v:
        return True
    if s.kind is Kind.FIELD_LOAD and s.rhs == v and s.through_pointer:
        return True
    if s.kind is Kind.FIELD_STORE and s.lhs == v and s.through_pointer and s.rhs != v:
        return True
    return False


def _subst_addr(s: Stmt, v: str, target: str) -> None:
    if s.kind is Kind.COPY and s.rhs == v:
        s.kind = Kind.ADDR_OF
        s.rhs = target
    elif s.kind is Kind.LOAD and s.rhs == v:
        s.kind = Kind.COPY
        s.rhs = target
    elif s.kind is Kind.STORE and s.lhs == v:
        # *(&target) = y  is  target = y;  *(&target) = &z  is  target = &z
        s.kind = Kind.ADDR_OF if s.rhs_addr else Kind.COPY
        s.rhs_addr = False
        s.lhs = target
    elif s.kind is Kind.STORE and s.rhs == v:
        s.rhs_addr = True
        s.rhs = target
    elif s.kind is Kind.FIELD_LOAD and s.rhs == v:
        s.through_pointer = False
        s.rhs = target
    elif s.kind is Kind.FIELD_STORE and s.lhs == v:
        s.through_pointer = False
        s.lhs = target


def _drop_stmt(proc: Proc, rpo_index: int) -> None:
    victim = proc.cfg.stmts[rpo_index]
    for block in proc.cfg.blocks.values():
        for i, s in enumerate(block.stmts):
            if s is victim:
                del block.stmts[i]
                _wire_cfg(proc)
                return
    raise AssertionError("statement not in any block")


def resolve_all_locals(prog: Program) -> Program:
    for proc in prog.funcs.values():
        resolve_locals(prog, proc)
    return prog


# ----------------------------------------------------------------------------
# Indirection level inference
# ----------------------------------------------------------------------------


def infer_levels(prog: Program) -> dict[str, Optional[int]]:
    """Indirection level per variable name, None when unknown.

    Levels stand in for the pointer types a typed front end would give us.
    Each assignment relates the levels of its operands rigidly (x = &y
    forces lvl(x) = lvl(y) + 1, and so on), which is a union-find over
    classes with integer offsets.  Each class is grounded so its lowest
    member sits at zero, then raised to honor floors from alloc and
    friends.  Contradictory chains (x = &x), arithmetic results, and
    variables touched through untyped field accesses go wild: their level
    is unknown and everything downstream must stay conservative.
    """
    parent: dict[str, str] = {}
    offset: dict[str, int] = {}  # lvl(v) = lvl(parent(v)) + offset[v]
    wild_roots: set[str] = set()
    floors: list[tuple[str, int]] = []
    mentioned: set[str] = set()

    def find(v: str) -> tuple[str, int]:
        if v not in parent:
            parent[v] = v
            offset[v] = 0
            return v, 0
        root, total = v, 0
        while parent[root] != root:
            total += offset[root]
            root = parent[root]
        node, seen = v, 0
        while parent[node] != root:
            nxt = parent[node]
            step = offset[node]
            parent[node] = root
            offset[node] = total - seen
            seen += step
            node = nxt
        return root, total

    def union(a: str, b: str, d: int) -> None:
        """Record lvl(a) = lvl(b) + d."""
        mentioned.update((a, b))
        ra, oa = find(a)
        rb, ob = find(b)
        if ra == rb:
            if oa != ob + d:
                wild_roots.add(ra)
            return
        parent[rb] = ra
        offset[rb] = oa - d - ob
        if rb in wild_roots:
            wild_roots.discard(rb)
            wild_roots.add(ra)

    def mark_wild(v: str) -> None:
        mentioned.add(v)
        r, _ = find(v)
        wild_roots.add(r)

    def floor(v: str, n: int) -> None:
        mentioned.add(v)
        find(v)
        floors.append((v, n))

    taken = sorted(
        {
            t.callee
            for f in prog.funcs.values()
            for t in f.cfg.stmts
            if t.kind is Kind.FN_ADDR
        }
    )

    for proc in prog.funcs.values():
        for s in proc.cfg.stmts:
            if s.kind is Kind.ADDR_OF:
                union(s.lhs, s.rhs, 1)
            elif s.kind is Kind.COPY:
                union(s.lhs, s.rhs, 0)
            elif s.kind is Kind.LOAD:
                union(s.rhs, s.lhs, 1)
            elif s.kind is Kind.STORE:
                union(s.lhs, s.rhs, 2 if s.rhs_addr else 1)
            elif s.kind is Kind.ALLOC:
                floor(s.lhs, 1)
            elif s.kind is Kind.FN_ADDR:
                floor(s.lhs, 1)
            elif s.kind is Kind.FIELD_LOAD:
                if s.through_pointer:
                    floor(s.rhs, 1)
                    mark_wild(s.lhs)
                else:
                    union(s.lhs, f"{s.rhs}.{s.fld}", 0)
            elif s.kind is Kind.FIELD_STORE:
                if s.through_pointer:
                    floor(s.lhs, 1)
                    mark_wild(s.rhs)
                else:
                    union(f"{s.lhs}.{s.fld}", s.rhs, 0)
            elif s.kind is Kind.ARITH:
                mark_wild(s.lhs)
            elif s.kind is Kind.CALL:
                if s.indirect:
                    floor(s.callee, 1)
                    targets = taken
                else:
                    targets = [s.callee]
                for callee_name in targets:
                    callee = prog.funcs[callee_name]
                    for formal, actual in zip(callee.params, s.args):
                        union(formal, actual, 0)
                    if s.receiver is not None:
                        union(s.receiver, callee.ret_var, 0)
            elif s.kind is Kind.RET and s.rhs is not None:
                union(proc.ret_var, s.rhs, 0)

    base: dict[str, int] = {}
    for v in mentioned:
        r, off = find(v)
        need = -off  # ground the lowest member of the class at zero
        if r not in base or base[r] < need:
            base[r] = need
    for v, n in floors:
        r, off = find(v)
        need = n - off
        if base.get(r, 0) < need:
            base[r] = need

    out: dict[str, Optional[int]] = {}
    for v in mentioned:
        r, off = find(v)
        if r in wild_roots:
            out[v] = None
            continue
        lvl = base.get(r, 0) + off
        out[v] = None if lvl > 8 else lvl
    return out
