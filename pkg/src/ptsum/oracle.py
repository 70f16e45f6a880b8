"""Concrete path enumeration and soundness checking.

The interpreter here is deliberately dumb: one value per cell, unwritten
cells hold garbage, every branch forks, loops and recursion are cut off
at a small unroll bound.  Walking every path it can afford, it records
the memory that actually reaches each program point and checks that the
analysis' reported facts admit it.  Dumbness is the point: the only
thing this module shares with the analysis is the location vocabulary,
so agreement means something.

Also provides a single-path replay of statement edges (``concrete_delta``)
and a direct memory semantics for summary edges (``concrete_apply``); the
property tests use both to cross-check the fixed-point machinery edge by
edge.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

from . import ir
from .build import boundary_names, location_universe, stmt_edges
from .client import (
    FieldCell,
    PointsToResult,
    _writable,
    in_scope,
    render_loc,
    visible_names,
)
from .compose import ALWAYS_CTX, reduce_edge
from .graph import (
    BOUNDARY_RANK,
    DEREF,
    Edge,
    Exact,
    Node,
    NodeKind,
    SummaryGraph,
    copy_edge,
    func,
    heap,
    var,
)


class _Budget(Exception):
    pass


# ----------------------------------------------------------------------------
# The interpreter
# ----------------------------------------------------------------------------


class _Interp:
    """Runs every affordable path, reporting each (proc, point, memory).

    Memory is a dict from cell to value; a missing key is garbage.  Calls
    are inlined into one flat memory: callee locals and the return slot
    are reset to garbage on entry and deliberately not restored on exit,
    which is harmless because frames other than the current one are out
    of scope for every check.
    """

    def __init__(
        self,
        prog: ir.Program,
        max_unroll: int,
        budget: int,
        on_state: Callable[[str, int, dict], None],
    ) -> None:
        self.prog = prog
        self.max_unroll = max_unroll
        self.budget = budget
        self.on_state = on_state
        self.completed = 0
        self.truncated = False
        # the states visited along the current path, root to here; on_state
        # may copy it when it wants a witness path
        self.trail: list[tuple[str, int]] = []

    def run(self) -> None:
        try:
            for _ in self._exec("main", 0, {}, {}, {}):
                self.completed += 1
        except _Budget:
            self.truncated = True

    # -- control ---------------------------------------------------------------

    def _exec(self, pname: str, i: int, M: dict, visits: dict, depths: dict):
        """Yield one memory per completed path suffix from (pname, i)."""
        cfg = self.prog.funcs[pname].cfg
        n = len(cfg.stmts)
        while True:
            self.budget -= 1
            if self.budget <= 0:
                raise _Budget
            self.trail.append((pname, i))
            self.on_state(pname, i, M)
            if i == n:
                yield dict(M)
                return
            seen = visits.get(i, 0) + 1
            if seen > self.max_unroll + 1:
                return  # the state was recorded; the continuation is cut
            visits[i] = seen
            s = cfg.stmts[i]
            succs = sorted(cfg.succ.get(i, ()))
            if s.kind is ir.Kind.BR and len(succs) > 1:
                for t in succs:
                    mark = len(self.trail)
                    yield from self._exec(pname, t, dict(M), dict(visits), depths)
                    del self.trail[mark:]
                return
            if s.kind is ir.Kind.CALL:
                (t,) = succs
                for M2 in self._call(s, M, depths):
                    mark = len(self.trail)
                    yield from self._exec(pname, t, M2, dict(visits), depths)
                    del self.trail[mark:]
                return
            if s.kind is ir.Kind.RET:
                if s.rhs is not None:
                    self._set(M, var(f"ret${pname}"), M.get(var(s.rhs)))
            elif s.kind not in (ir.Kind.GOTO, ir.Kind.BR):
                self._stmt(s, M)
            i = succs[0]

    def _call(self, s: ir.Stmt, M: dict, depths: dict):
        if s.indirect:
            v = M.get(var(s.callee))
            if not (
                isinstance(v, Node)
                and v.kind is NodeKind.FUNC
                and v.name in self.prog.funcs
            ):
                return  # garbage function pointer: no real run goes here
            tname = v.name
        else:
            tname = s.callee
        if depths.get(tname, 0) >= self.max_unroll:
            return  # recursion cut: claim nothing past the bound
        callee = self.prog.funcs[tname]
        args = [M.get(var(a)) for a in s.args]
        for l in callee.locals_:
            M.pop(var(l), None)
        M.pop(var(f"ret${tname}"), None)
        for formal, v in zip(callee.params, args):
            self._set(M, var(formal), v)
        nd = dict(depths)
        nd[tname] = nd.get(tname, 0) + 1
        mark = len(self.trail)
        for M2 in self._exec(tname, 0, M, {}, nd):
            if s.receiver is not None:
                self._set(M2, var(s.receiver), M2.get(var(f"ret${tname}")))
            yield M2
        del self.trail[mark:]

    # -- data ------------------------------------------------------------------

    @staticmethod
    def _set(M: dict, cell, v) -> None:
        if v is None:
            M.pop(cell, None)
        else:
            M[cell] = v

    def _stmt(self, s: ir.Stmt, M: dict) -> None:
        k = s.kind
        if k is ir.Kind.ADDR_OF:
            M[var(s.lhs)] = var(s.rhs)
        elif k is ir.Kind.COPY:
            self._set(M, var(s.lhs), M.get(var(s.rhs)))
        elif k is ir.Kind.ARITH:
            # same object, representative offset
            self._set(M, var(s.lhs), M.get(var(s.rhs)) if s.rhs else None)
        elif k is ir.Kind.LOAD:
            p = M.get(var(s.rhs))
            self._set(M, var(s.lhs), M.get(p) if p is not None else None)
        elif k is ir.Kind.STORE:
            p = M.get(var(s.lhs))
            if p is not None and _writable(p):
                v = var(s.rhs) if s.rhs_addr else M.get(var(s.rhs))
                self._set(M, p, v)
        elif k is ir.Kind.FIELD_LOAD:
            if s.through_pointer:
                p = M.get(var(s.rhs))
                v = M.get(FieldCell(p, s.fld)) if p is not None else None
            else:
                v = M.get(var(f"{s.rhs}.{s.fld}"))
            self._set(M, var(s.lhs), v)
        elif k is ir.Kind.FIELD_STORE:
            v = M.get(var(s.rhs))
            if s.through_pointer:
                p = M.get(var(s.lhs))
                if p is not None and not _is_garbage_base(p):
                    self._set(M, FieldCell(p, s.fld), v)
            else:
                self._set(M, var(f"{s.lhs}.{s.fld}"), v)
        elif k is ir.Kind.ALLOC:
            M[var(s.lhs)] = heap(s.site)
        elif k is ir.Kind.FN_ADDR:
            M[var(s.lhs)] = func(s.callee)


def _is_garbage_base(p) -> bool:
    return isinstance(p, Node) and p.kind is NodeKind.UNDEF


# ----------------------------------------------------------------------------
# Soundness checking
# ----------------------------------------------------------------------------


@dataclass
class SoundnessReport:
    ok: bool
    points_checked: int
    paths_completed: int
    truncated: bool
    # (proc, point, (cell, value)) for each concrete pair the facts missed
    witnesses: list[tuple[str, int, tuple[str, str]]] = field(
        default_factory=list
    )
    covered: list[tuple[str, int]] = field(default_factory=list)
    # the path that produced the first miss, as visited (proc, point) states
    witness_trail: Optional[tuple[tuple[str, int], ...]] = None

    def render(self) -> str:
        if self.ok:
            note = " (budget hit)" if self.truncated else ""
            return (
                f"PASS: {self.points_checked} points covered by "
                f"{self.paths_completed} paths{note}"
            )
        lines = [f"FAIL: {len(self.witnesses)} uncovered concrete pairs"]
        for pr, pt, (c, v) in self.witnesses[:20]:
            lines.append(f"  {pr}@{pt}: {c} -> {v} not admitted")
        if self.witness_trail:
            steps = " -> ".join(f"{p}@{i}" for p, i in self.witness_trail)
            lines.append(f"  first witness path: {steps}")
        return "\n".join(lines)


def check_soundness(
    prog: ir.Program,
    facts: PointsToResult,
    *,
    max_unroll: int = 3,
    path_budget: int = 100_000,
) -> SoundnessReport:
    """Does every reachable concrete memory fall inside the reported facts?

    Comparison happens per program point in the rendered vocabulary of the
    facts themselves: pairs whose cell or value lies outside the current
    procedure's scope are ignored on both sides, and a name nothing wrote
    yet appears as pointing to garbage.
    """
    levels = ir.infer_levels(prog)
    vis = {p: visible_names(prog, levels, p) for p in prog.funcs}
    seen: set = set()
    covered: set = set()
    missed: dict = {}
    first_trail: list = []

    def on_state(pname: str, point: int, M: dict) -> None:
        key = (pname, point, frozenset(M.items()))
        if key in seen:
            return
        seen.add(key)
        covered.add((pname, point))
        have = facts.facts[pname].get(point, frozenset())
        named: set[str] = set()
        pairs: set = set()
        for c, v in M.items():
            if not in_scope(c, pname) or not in_scope(v, pname):
                continue
            pairs.add((render_loc(c), render_loc(v)))
            if isinstance(c, Node) and c.kind is NodeKind.VAR:
                named.add(c.name)
        for nm in vis[pname]:
            if nm not in named:
                pairs.add((render_loc(var(nm)), "?"))
        for pair in pairs:
            if pair not in have:
                missed.setdefault((pname, point, pair), None)
                if not first_trail:
                    first_trail.append(tuple(interp.trail))

    interp = _Interp(prog, max_unroll, path_budget, on_state)
    interp.run()
    witnesses = [(p, pt, pair) for (p, pt, pair) in sorted(missed)]
    return SoundnessReport(
        ok=not witnesses,
        points_checked=len(covered),
        paths_completed=interp.completed,
        truncated=interp.truncated,
        witnesses=witnesses,
        covered=sorted(covered),
        witness_trail=first_trail[0] if first_trail else None,
    )


# ----------------------------------------------------------------------------
# Single-path replay
# ----------------------------------------------------------------------------


def concrete_delta(
    prog: ir.Program,
    pname: str,
    path: list[int],
    *,
    levels: Optional[dict] = None,
) -> SummaryGraph:
    """Replay one statement path into a summary graph, exactly.

    A single path has no merges, so every reduction is conclusive and each
    written (source, level) holds exactly the values this one run gives
    it: folding a statement in just reorients that pair's out-edges.  The
    graph starts from entry copies alone; what the result should relate to
    is this path, not every path.
    """
    proc = prog.funcs[pname]
    if levels is None:
        levels = ir.infer_levels(prog)
    universe = location_universe(prog)
    seeds = [
        copy_edge(nm)
        for nm in sorted(boundary_names(prog, pname, levels))
        if not nm.startswith("ret$")
    ]
    g = SummaryGraph(seeds, {e: BOUNDARY_RANK for e in seeds})
    for i in path:
        s = proc.cfg.stmts[i]
        if s.kind in (ir.Kind.CALL, ir.Kind.ARITH):
            raise ValueError(f"cannot replay a {s.kind.name} statement")
        rank = (i + 1, 0)
        reduced: set[Edge] = set()
        for e in stmt_edges(s, proc, universe):
            reduced |= reduce_edge(e, rank, g, ALWAYS_CTX)
        if not reduced:
            continue
        keys = {(r.src, r.src_lev) for r in reduced}
        stale = [
            e
            for e in g.edges
            if not e.is_aggregate and (e.src, e.src_lev) in keys
        ]
        g = g.replace(stale, [(r, rank) for r in reduced])
    return g


def concrete_apply(edges, M: dict) -> dict:
    """Run summary edges over a one-value-per-cell memory, in order.

    Each edge x -(i,j)-> y navigates its source path (short of the last
    lookup) to find the written cell and its whole target path to find
    the value.  A navigation that hits garbage means the edge does not
    describe this memory and it is skipped; writing garbage erases the
    cell.  Exercised by the property tests to confirm that a composed
    edge means the same thing as its parts.
    """
    out = dict(M)
    for e in edges:
        if not isinstance(e.src_lev, Exact) or not isinstance(e.tgt_lev, Exact):
            continue
        if e.src_lev.path.overflowed or e.tgt_lev.path.overflowed:
            continue
        cell = _cell_at(out, e.src, e.src_lev.path)
        if cell is None or not _writable(cell):
            continue
        val = _value_at(out, e.tgt, e.tgt_lev.path)
        _Interp._set(out, cell, val)
    return out


def _cell_at(M: dict, node: Node, path):
    """The one cell a source path denotes: the node, then lookup steps."""
    cur = node
    for st in path.steps[1:]:
        v = M.get(cur)
        if v is None:
            return None
        cur = v if st == DEREF else FieldCell(v, st)
    return cur


def _value_at(M: dict, node: Node, path):
    """The value a target path denotes; every step is a lookup."""
    cur = node
    for st in path.steps:
        if cur is None:
            return None
        cell = cur if st == DEREF else FieldCell(cur, st)
        cur = M.get(cell)
    return cur
