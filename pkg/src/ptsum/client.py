"""Classical per-point points-to facts, computed two independent ways.

The summary route applies each program point's summary graph to the memory
the callers arranged at procedure entry.  The statement route runs an
ordinary flow-sensitive transfer over the CFG, consulting callee summaries
only at call sites.  Both land in the same result type so they can be
compared pair for pair; agreement between the routes is one of the better
internal checks we have, since they share almost no code.

Memory here is a set of (cell, value) pairs over concrete-ish locations:
variables, allocation sites, field slots of either, and the distinguished
garbage value ``?``.  A cell nothing ever wrote holds garbage.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional

from . import ir
from .build import (
    AnalysisError,
    location_universe,
    referenced_names,
    stmt_edges,
)
from .calls import AnalysisResult, Key, must_defined
from .compose import FuelExhausted
from .graph import (
    DEREF,
    Edge,
    Node,
    NodeKind,
    SummaryGraph,
    UNDEF_NODE,
    entry,
    lv,
    var,
)


@dataclass(frozen=True)
class FieldCell:
    """One field slot of an object named by a location."""

    base: Node
    fld: str

    def render(self) -> str:
        return f"{self.base.render()}.{self.fld}"


# A location is a node or a field slot; a memory is a set of (cell, value)
# pairs, with UNDEF_NODE as the garbage value.
Loc = "Node | FieldCell"
Pair = "tuple[Loc, Loc]"


def _display(name: str) -> str:
    return name.split("::", 1)[1] if "::" in name else name


def render_loc(loc) -> str:
    if isinstance(loc, FieldCell):
        return f"{render_loc(loc.base)}.{loc.fld}"
    k = loc.kind
    if k is NodeKind.ENTRY:
        return _display(loc.name) + "'"
    if k is NodeKind.FUNC:
        return loc.name + "()"
    if k is NodeKind.UNDEF:
        return "?"
    return _display(loc.name)


def _is_undef(loc) -> bool:
    return isinstance(loc, Node) and loc.kind is NodeKind.UNDEF


def in_scope(loc, pname: str) -> bool:
    """Is a location part of a procedure's reportable state?

    Globals, the procedure's own frame, heap objects, and functions are;
    entry bookkeeping, return slots, and other frames are not.
    """
    if isinstance(loc, FieldCell):
        return in_scope(loc.base, pname)
    if loc.kind is NodeKind.ENTRY:
        return False
    if loc.kind is not NodeKind.VAR:
        return True
    base = loc.name.split(".", 1)[0]
    if base.startswith("ret$"):
        return False
    return "::" not in base or base.startswith(pname + "::")


def visible_names(prog: ir.Program, levels, pname: str) -> set[str]:
    """Pointer-holding names a procedure's facts should mention."""
    proc = prog.funcs[pname]
    own = pname + "::"
    out: set[str] = set()
    pool = (
        set(referenced_names(proc))
        | set(proc.params)
        | set(proc.locals_)
        | set(prog.globals_)
    )
    for n in pool:
        base = n.split(".", 1)[0]
        if base.startswith("ret$"):
            continue
        if "::" in base and not base.startswith(own):
            continue
        lev = levels.get(n, 0)
        if lev is None or lev >= 1:
            out.add(n)
    return out


def _writable(loc) -> bool:
    if isinstance(loc, FieldCell):
        return True
    return loc.kind in (NodeKind.VAR, NodeKind.ENTRY, NodeKind.HEAP)


# ----------------------------------------------------------------------------
# Memory lookups
# ----------------------------------------------------------------------------


def _lookup(M: set, cell) -> set:
    """Values a cell holds.  A never-written cell holds garbage."""
    out = {v for c, v in M if c == cell}
    return out or {UNDEF_NODE}


def _step(M: set, locs: set, step: str) -> set:
    out: set = set()
    for l in locs:
        if _is_undef(l):
            # the cell is one we cannot name, so its content is anything;
            # losing the pair here would let a later strong write pass off
            # "unbound" as "never garbage"
            out.add(UNDEF_NODE)
            continue
        cell = l if step == DEREF else FieldCell(l, step)
        out |= _lookup(M, cell)
    return out


def _reach(M: set, locs: Iterable) -> set:
    """Everything reachable from locs by any chain of lookups."""
    fields_of: dict = {}
    for c, _ in M:
        if isinstance(c, FieldCell):
            fields_of.setdefault(c.base, set()).add(c.fld)
    seen = set(locs)
    work = list(seen)
    while work:
        l = work.pop()
        if _is_undef(l):
            continue
        nxt = set(_lookup(M, l))
        for f in fields_of.get(l, ()):
            nxt |= _lookup(M, FieldCell(l, f))
        for v in nxt:
            if v not in seen:
                seen.add(v)
                work.append(v)
    return seen


def values_of(M: set, node: Node, path) -> set:
    """The value set an edge target denotes in a memory.

    Garbage is dropped when stepped through but kept when it is the final
    answer: copying a maybe-garbage variable propagates maybe-garbage.  A
    summarized (overflowed) tail widens to everything reachable, garbage
    included, since some extension always bottoms out in unwritten cells.
    """
    cur: set = {node}
    for step in path.steps:
        cur = _step(M, cur, step)
    if path.overflowed:
        cur = cur | _reach(M, {l for l in cur if not _is_undef(l)})
        cur.add(UNDEF_NODE)
    return cur


def cells_of(M: set, node: Node, path, prog_fields) -> tuple[set, bool]:
    """The cells an edge source writes, plus whether the set is exact.

    The first step lands on the named location itself; each further step
    is one lookup, a dereference yielding the value as a cell and a field
    step yielding the value's field slot.  The set is exact only when no
    step had to discard garbage: a pointer that may be garbage may write
    nowhere (or anywhere), so the surviving cells are not certainly hit.
    A summarized tail makes the write hit anything reachable, never
    exactly.
    """
    cur: set = {node}
    exact = True
    for step in path.steps[1:]:
        vals: set = set()
        for c in cur:
            vals |= _lookup(M, c)
        if any(_is_undef(v) for v in vals):
            exact = False
            vals = {v for v in vals if not _is_undef(v)}
        cur = vals if step == DEREF else {FieldCell(v, step) for v in vals}
    if not path.overflowed:
        return {c for c in cur if _writable(c)}, exact
    start: set = set()
    for c in cur:
        start |= _lookup(M, c)
    cells = {c for c in cur if _writable(c)}
    for l in _reach(M, {v for v in start if not _is_undef(v)}):
        if _is_undef(l):
            continue
        if _writable(l):
            cells.add(l)
        for f in prog_fields:
            cells.add(FieldCell(l, f))
    return cells, False


# ----------------------------------------------------------------------------
# Memory updates
# ----------------------------------------------------------------------------


def _write(
    M: set,
    cells: set,
    values: set,
    strong: bool,
    protected: frozenset | set = frozenset(),
) -> set:
    """Fold one write into M in place; returns the pairs it added."""
    new = {(c, v) for c in cells for v in values if _writable(c)}
    if strong:
        M -= {(c, v) for (c, v) in M if c in cells and (c, v) not in protected}
    M |= new
    return new


def _strong_ok(cells: set, escaped: set[str], exact: bool) -> bool:
    if not exact or len(cells) != 1:
        return False
    (c,) = cells
    if isinstance(c, FieldCell):
        if c.base.kind is not NodeKind.VAR:
            return False  # field of a heap object: one name, many cells
        name = c.base.name
    elif c.kind is NodeKind.VAR:
        name = c.name
    else:
        return False  # heap cells and entry history are never replaced
    return name not in escaped


def apply_summary(
    delta: SummaryGraph,
    entry_mem: set,
    *,
    escaped: set[str],
    prog_fields: Iterable[str],
    certain: Optional[bool] = None,
    fault_strong: bool = False,
) -> set:
    """Memory after a procedure body runs, given its summary.

    Entry twins are seeded from the entry memory so edges phrased against
    entry values resolve to what the caller arranged.  Edges replay in the
    order their statements executed; edges recording alternative values of
    the same write shield one another from strong removal.  ``certain``
    overrides the per-edge judgment of whether the write happened on every
    path (pass False when entry bookkeeping was disabled).  A TOP summary
    means the code never returns: it contributes no memory at all.
    """
    if delta.is_top:
        return set()
    M = set(entry_mem)
    for c, v in entry_mem:
        if isinstance(c, Node) and c.kind is NodeKind.VAR:
            M.add((entry(c.name), v))
    shields: dict = {}
    for e in delta.edges_in_order():
        if e.is_boundary:
            continue
        cells, exact = cells_of(M, e.src, e.src_lev.path, prog_fields)
        vals = values_of(M, e.tgt, e.tgt_lev.path)
        cert = must_defined(e, delta) if certain is None else certain
        strong = fault_strong or (cert and _strong_ok(cells, escaped, exact))
        group = (e.src, e.src_lev)
        shield = shields.setdefault(group, set())
        shield |= _write(M, cells, vals, strong, protected=shield)
        if e.tgt.kind is NodeKind.HEAP and e.tgt_lev == lv(0):
            M.add((e.tgt, UNDEF_NODE))  # fresh cells hold garbage
    return {(c, v) for (c, v) in M if not _entryish(c) and not _entryish(v)}


def _entryish(loc) -> bool:
    if isinstance(loc, FieldCell):
        return _entryish(loc.base)
    return loc.kind is NodeKind.ENTRY


# ----------------------------------------------------------------------------
# Results
# ----------------------------------------------------------------------------


@dataclass
class PointsToResult:
    """Rendered per-point facts; equality ignores which route produced them."""

    mode: str = field(compare=False)
    facts: dict[str, dict[int, frozenset]] = field(default_factory=dict)
    bi: dict[str, frozenset] = field(default_factory=dict)

    def at(self, proc: str, point: int) -> frozenset:
        return self.facts[proc][point]

    def to_json(self) -> dict:
        return {
            "mode": self.mode,
            "facts": {
                p: {
                    str(pt): sorted([c, v] for c, v in pairs)
                    for pt, pairs in pts.items()
                }
                for p, pts in sorted(self.facts.items())
            },
            "bi": {
                p: sorted([c, v] for c, v in pairs)
                for p, pairs in sorted(self.bi.items())
            },
        }


# ----------------------------------------------------------------------------
# The two routes
# ----------------------------------------------------------------------------


class _Client:
    def __init__(
        self,
        result: AnalysisResult,
        mode: str,
        bypass: bool,
        fault_strong: bool,
    ) -> None:
        self.res = result
        self.prog = result.prog
        self.levels = result.levels
        self.escaped = result.escaped
        self.mode = mode
        self.bypass = bypass
        self.fault = fault_strong
        # with entry bookkeeping disabled the summaries cannot justify any
        # certainty about callee writes, so nothing imported is strong
        self.certain: Optional[bool] = False if result.opts.no_boundary else None
        self.fields = sorted(self.prog.fields)
        self.universe = location_universe(self.prog)
        self.merged = {p: result.merged(p) for p in self.prog.funcs}
        self.visible = {p: self._visible(p) for p in self.prog.funcs}
        self.roots = (
            {p: self._roots(p) for p in self.prog.funcs} if bypass else {}
        )

    # -- driving --------------------------------------------------------------

    def run(self) -> PointsToResult:
        bi: dict[str, set] = {"main": self._main_seed()}
        parked: dict[str, set] = {}
        facts: dict[str, dict[int, set]] = {}
        for _ in range(64):
            facts = {
                p: self._proc_facts(p, bi.get(p, set()))
                for p in self.prog.funcs
            }
            nbi, nparked = self._boundaries(facts, parked)
            if nbi == bi and nparked == parked:
                break
            bi, parked = nbi, nparked
        else:
            raise AnalysisError("caller boundary facts failed to stabilize")
        return self._report(facts, bi, parked)

    def _pointerish(self, name: str) -> bool:
        lev = self.levels.get(name, 0)
        return lev is None or lev >= 1

    def _main_seed(self) -> set:
        seed = set()
        for g in self.prog.globals_:
            if self._pointerish(g):
                seed.add((var(g), UNDEF_NODE))
        for proc in self.prog.funcs.values():
            for n in referenced_names(proc):
                if "." in n and "::" not in n and self._pointerish(n):
                    seed.add((var(n), UNDEF_NODE))
        return seed

    def _entry_mem(self, pname: str, bi_pairs: set) -> set:
        M = set(bi_pairs)
        proc = self.prog.funcs[pname]
        bound = {
            c.name
            for c, _ in M
            if isinstance(c, Node) and c.kind is NodeKind.VAR
        }
        for l in proc.locals_:
            if self._pointerish(l):
                M.add((var(l), UNDEF_NODE))
        for f in proc.params:
            if self._pointerish(f) and f not in bound:
                M.add((var(f), UNDEF_NODE))
        for n in referenced_names(proc):
            if "." in n and "::" in n and self._pointerish(n):
                M.add((var(n), UNDEF_NODE))
        return M

    # -- per-procedure facts ----------------------------------------------------

    def _proc_facts(self, pname: str, bi_pairs: set) -> dict[int, set]:
        M0 = self._entry_mem(pname, bi_pairs)
        if self.mode == "gpg":
            return {
                pt: apply_summary(
                    g,
                    M0,
                    escaped=self.escaped,
                    prog_fields=self.fields,
                    certain=self.certain,
                    fault_strong=self.fault,
                )
                for pt, g in self.merged[pname].points.items()
            }
        return self._flow(pname, M0)

    def _flow(self, pname: str, M0: set) -> dict[int, set]:
        proc = self.prog.funcs[pname]
        cfg = proc.cfg
        n = len(cfg.stmts)
        outs: dict[int, Optional[set]] = {i: None for i in range(n)}

        def reachable(i: int) -> bool:
            return i == 0 or any(
                outs.get(pd) is not None for pd in cfg.pred.get(i, ())
            )

        def in_of(i: int) -> set:
            acc = set(M0) if i == 0 else set()
            for pd in cfg.pred.get(i, ()):
                prev = outs.get(pd)
                if prev is not None:
                    acc |= prev
            return acc

        visits = [0] * (n + 1)
        work = list(range(n))
        queued = set(work)
        while work:
            i = work.pop(0)
            queued.discard(i)
            if not reachable(i):
                continue
            out = self._transfer(pname, i, cfg.stmts[i], in_of(i))
            if outs[i] == out:
                continue
            visits[i] += 1
            if visits[i] > 64:
                raise FuelExhausted(
                    f"{pname}: classical facts at point {i} failed to settle"
                )
            outs[i] = out
            for t in cfg.succ.get(i, ()):
                if t < n and t not in queued:
                    work.append(t)
                    queued.add(t)

        facts = {
            i: in_of(i) if reachable(i) else set() for i in range(n)
        }
        facts[n] = in_of(n) if (n == 0 or reachable(n)) else set()
        return facts

    def _transfer(self, pname: str, i: int, s: ir.Stmt, M: set) -> set:
        if s.kind is ir.Kind.CALL:
            return self._apply_call(pname, i, s, M)
        edges = stmt_edges(s, self.prog.funcs[pname], self.universe)
        if not edges:
            return M
        M = set(M)
        e0 = edges[0]
        cells, exact = cells_of(M, e0.src, e0.src_lev.path, self.fields)
        vals: set = set()
        fresh: set = set()
        for e in edges:
            vals |= values_of(M, e.tgt, e.tgt_lev.path)
            if e.tgt.kind is NodeKind.HEAP and e.tgt_lev == lv(0):
                fresh.add(e.tgt)
        weak = s.kind is ir.Kind.ARITH
        strong = self.fault or (
            not weak and _strong_ok(cells, self.escaped, exact)
        )
        _write(M, cells, vals, strong)
        for h in fresh:
            M.add((h, UNDEF_NODE))
        return M

    def _apply_call(self, pname: str, i: int, s: ir.Stmt, M: set) -> set:
        out: set = set()
        for key in self.merged[pname].call_targets.get(i, []):
            tname = key[0]
            delta = self.res.summaries[key].final
            if delta.is_top:
                continue  # never returns; contributes no memory
            callee = self.prog.funcs[tname]
            Mt = set(M)
            for formal, actual in zip(callee.params, s.args):
                vals = values_of(Mt, var(actual), lv(1).path)
                _write(Mt, {var(formal)}, vals, strong=True)
            Mt = apply_summary(
                delta,
                Mt,
                escaped=self.escaped,
                prog_fields=self.fields,
                certain=self.certain,
                fault_strong=self.fault,
            )
            ret_name = f"ret${tname}"
            if s.receiver is not None:
                vals = values_of(Mt, var(ret_name), lv(1).path)
                strong = self.fault or s.receiver not in self.escaped
                _write(Mt, {var(s.receiver)}, vals, strong=strong)
            own = pname + "::"
            out |= {
                (c, v)
                for (c, v) in Mt
                if not self._dead_after_call(c, own, ret_name)
                and not self._dead_after_call(v, own, ret_name)
            }
        return out

    def _dead_after_call(self, loc, own: str, ret_name: str) -> bool:
        """Locations that lose meaning once the callee returns."""
        if isinstance(loc, FieldCell):
            return self._dead_after_call(loc.base, own, ret_name)
        if loc.kind not in (NodeKind.VAR, NodeKind.ENTRY):
            return False
        base = loc.name.split(".", 1)[0]
        if base == ret_name:
            return True
        if base.startswith("ret$"):
            return False
        return "::" in base and not base.startswith(own)

    # -- boundary information ----------------------------------------------------

    def _boundaries(
        self, facts: dict[str, dict[int, set]], parked: dict[str, set]
    ) -> tuple[dict[str, set], dict[str, set]]:
        nbi: dict[str, set] = {"main": self._main_seed()}
        nparked: dict[str, set] = {}
        for cname, proc in self.prog.funcs.items():
            for i, s in enumerate(proc.cfg.stmts):
                if s.kind is not ir.Kind.CALL:
                    continue
                Mb = facts[cname].get(i, set())
                for key in self.merged[cname].call_targets.get(i, []):
                    tname = key[0]
                    callee = self.prog.funcs[tname]
                    contrib: set = set()
                    for formal, actual in zip(callee.params, s.args):
                        for v in values_of(Mb, var(actual), lv(1).path):
                            contrib.add((var(formal), v))
                    if self.bypass:
                        seeds = {v for _, v in contrib}
                        keep, park = self._split(Mb, tname, seeds)
                        contrib |= keep
                        held = nparked.setdefault(tname, set())
                        held |= park | parked.get(cname, set())
                    else:
                        contrib |= Mb
                    nbi.setdefault(tname, set()).update(contrib)
        return nbi, nparked

    def _anchor(self, loc):
        return self._anchor(loc.base) if isinstance(loc, FieldCell) else loc

    def _split(self, Mb: set, tname: str, seeds: set) -> tuple[set, set]:
        """Pairs the callee could observe vs pairs that may skip around it.

        A pair matters to the callee when its cell is rooted at a name some
        reachable statement mentions (or at a location reachable from one
        by following values).  Everything else takes the shortcut: it
        rejoins the reported facts without ever entering the callee's
        analysis.  Writes count as mentions: a parked pair is pasted back
        into the callee's reported facts verbatim, which is only faithful
        when nothing below the call could have replaced it.
        """
        keep_locs = {var(r) for r in self.roots[tname]}
        keep_locs |= {v for v in seeds if not _is_undef(v)}
        changed = True
        while changed:
            changed = False
            for c, v in Mb:
                if _is_undef(v) or v in keep_locs:
                    continue
                if self._anchor(c) in keep_locs:
                    keep_locs.add(v)
                    changed = True
        keep = {(c, v) for (c, v) in Mb if self._anchor(c) in keep_locs}
        return keep, Mb - keep

    def _roots(self, tname: str) -> set[str]:
        out: set[str] = set()
        for pr in sorted(ir.callees_transitive(self.prog, tname)):
            for nm in referenced_names(self.prog.funcs[pr]):
                if pr == tname or "::" not in nm.split(".", 1)[0]:
                    out.add(nm)
        return out

    # -- reporting ----------------------------------------------------------------

    def _visible(self, pname: str) -> set[str]:
        return visible_names(self.prog, self.levels, pname)

    def _render_mem(self, pname: str, M: set) -> frozenset:
        kept: set = set()
        named: set[str] = set()
        for c, v in M:
            if not in_scope(c, pname) or not in_scope(v, pname):
                continue
            kept.add((render_loc(c), render_loc(v)))
            if isinstance(c, Node) and c.kind is NodeKind.VAR:
                named.add(c.name)
        for n in self.visible[pname]:
            if n not in named:
                kept.add((_display(n), "?"))
        return frozenset(kept)

    def _report(
        self,
        facts: dict[str, dict[int, set]],
        bi: dict[str, set],
        parked: dict[str, set],
    ) -> PointsToResult:
        out_facts: dict[str, dict[int, frozenset]] = {}
        for p in self.prog.funcs:
            extra = parked.get(p, set())
            out_facts[p] = {
                pt: self._render_mem(p, M | extra)
                for pt, M in sorted(facts[p].items())
            }
        out_bi = {
            p: self._render_mem(p, bi.get(p, set())) for p in self.prog.funcs
        }
        return PointsToResult(self.mode, out_facts, out_bi)


def classical(
    result: AnalysisResult,
    mode: str = "gpg",
    *,
    bypass: bool = False,
    fault_strong: bool = False,
) -> PointsToResult:
    """Per-point points-to facts for a whole analyzed program.

    ``mode`` picks the route: "gpg" applies summaries, "stmtff" re-runs a
    statement-level flow-sensitive transfer.  ``bypass`` routes caller
    facts the callee cannot observe around the callee instead of through
    it.  ``fault_strong`` deliberately treats every write as certain; it
    exists so the soundness harness has a live defect to catch.
    """
    if mode not in ("gpg", "stmtff"):
        raise ValueError(f"unknown mode {mode!r}")
    return _Client(result, mode, bypass, fault_strong).run()
