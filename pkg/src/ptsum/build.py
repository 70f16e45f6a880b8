"""Intraprocedural summary construction.

Each procedure gets, per program point, a summary graph describing what it
has done so far to pointer memory, phrased relative to the (unknown) state
at procedure entry.  The entry state itself is modeled by boundary edges:
a copy edge x -(1,1)-> x' saying "x still holds its entry value", and a
catch-all edge x' -(N,0)-> s admitting that anything reachable from the
entry value may point anywhere the caller arranged.

Statements contribute one edge each.  The edge is first reduced against
the current graph (resolving what it reads in terms of entry values and
known facts), then folded in, strongly when exactly one location is known
to be overwritten.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Optional

from . import ir
from .compose import ComposeCtx, FuelExhausted, reduce_edge
from .graph import (
    AccessPath,
    AllExcept,
    BOUNDARY_RANK,
    Edge,
    Exact,
    Node,
    NodeKind,
    Rank,
    SummaryGraph,
    Threats,
    TOP,
    UNDEF_NODE,
    aggregate_edge,
    copy_edge,
    entry,
    func,
    heap,
    lv,
    var,
)


class AnalysisError(Exception):
    """The program defeats the analysis (unresolved targets, no fixed point)."""


@dataclass
class BuildOpts:
    k_limit: Optional[int] = 2
    no_boundary: bool = False
    iteration_cap: int = 32


@dataclass
class ProcSummaries:
    proc: str
    points: dict[int, SummaryGraph]
    final: SummaryGraph
    # resolved callees per call site: rpo -> list of (callee name, fp context)
    call_targets: dict[int, list] = field(default_factory=dict)


# ----------------------------------------------------------------------------
# Boundary
# ----------------------------------------------------------------------------


def referenced_names(proc: ir.Proc) -> set[str]:
    """Variable names (including field composites) a procedure touches."""
    names: set[str] = set()
    for s in proc.cfg.stmts:
        for v in (s.lhs, s.rhs, s.receiver):
            if v is not None:
                names.add(v)
        names.update(s.args)
        if s.kind is ir.Kind.CALL and s.indirect:
            names.add(s.callee)
        if s.fld is not None and not s.through_pointer:
            if s.kind is ir.Kind.FIELD_LOAD:
                names.add(f"{s.rhs}.{s.fld}")
            else:
                names.add(f"{s.lhs}.{s.fld}")
    names.discard(None)
    return names


def boundary_names(
    prog: ir.Program, proc_name: str, levels: Mapping[str, Optional[int]]
) -> set[str]:
    """Names that deserve boundary bookkeeping in this procedure's summary.

    A name qualifies when it can hold a pointer (inferred level >= 1, or
    unknown) and its value at procedure entry means something: globals,
    and this procedure's own formals (bound by the caller).  Locals hold
    garbage at entry, so giving them entry bookkeeping would only assert
    false continuity.  Globals referenced by reachable callees count too;
    callees rephrase their effects in terms of our entry state, so their
    working set is part of ours.
    """
    proc = prog.funcs[proc_name]
    names: set[str] = set(referenced_names(proc))
    for callee in ir.callees_transitive(prog, proc_name):
        if callee == proc_name:
            continue
        for n in referenced_names(prog.funcs[callee]):
            if "::" not in n.split(".", 1)[0]:
                names.add(n)
    formals = set(proc.params)
    out = set()
    for n in names:
        base = n.split(".", 1)[0]
        if "::" in base and base not in formals:
            continue
        lev = levels.get(n, 0)
        if lev is None or lev >= 1:
            out.add(n)
    return out


def boundary_gpg(
    prog: ir.Program,
    proc_name: str,
    levels: Mapping[str, Optional[int]],
    opts: BuildOpts,
) -> SummaryGraph:
    if opts.no_boundary:
        return SummaryGraph()
    edges = []
    for name in sorted(boundary_names(prog, proc_name, levels)):
        if name.startswith("ret$"):
            continue
        edges.append(copy_edge(name))
        edges.append(aggregate_edge(name))
    # locals hold garbage at entry, so they get no copy edge (there is no
    # entry value worth preserving), but they still get the catch-all: its
    # exclusion set is how the summary proves a write happened on every
    # path, which matters for locals exactly as much as for globals
    proc = prog.funcs[proc_name]
    formals = set(proc.params)
    tracked = {e.src.name for e in edges if e.is_aggregate}
    for name in sorted(referenced_names(proc)):
        base = name.split(".", 1)[0]
        if "::" not in base or base in formals or name in tracked:
            continue
        lev = levels.get(name, 0)
        if lev is None or lev >= 1:
            edges.append(aggregate_edge(name))
    return SummaryGraph(edges, {e: BOUNDARY_RANK for e in edges})


# ----------------------------------------------------------------------------
# Statement edges
# ----------------------------------------------------------------------------


def location_universe(prog: ir.Program) -> list[Node]:
    """Every nameable location, for statements whose result is unbounded."""
    names: set[str] = set(prog.globals_)
    for proc in prog.funcs.values():
        names |= set(proc.params) | set(proc.locals_)
        names |= referenced_names(proc)
    locs: list[Node] = [var(n) for n in sorted(names) if not n.startswith("ret$")]
    locs += [heap(site) for site in sorted(prog.sites)]
    taken = {
        s.callee
        for proc in prog.funcs.values()
        for s in proc.cfg.stmts
        if s.kind is ir.Kind.FN_ADDR
    }
    locs += [func(f) for f in sorted(taken)]
    return locs


def stmt_edges(s: ir.Stmt, proc: ir.Proc, universe: list[Node]) -> list[Edge]:
    k = s.kind
    if k is ir.Kind.ADDR_OF:
        return [Edge(var(s.lhs), lv(1), var(s.rhs), lv(0))]
    if k is ir.Kind.COPY:
        return [Edge(var(s.lhs), lv(1), var(s.rhs), lv(1))]
    if k is ir.Kind.LOAD:
        return [Edge(var(s.lhs), lv(1), var(s.rhs), lv(2))]
    if k is ir.Kind.STORE:
        tgt_lev = lv(0) if s.rhs_addr else lv(1)
        return [Edge(var(s.lhs), lv(2), var(s.rhs), tgt_lev)]
    if k is ir.Kind.FIELD_LOAD:
        if s.through_pointer:
            return [
                Edge(
                    var(s.lhs),
                    lv(1),
                    var(s.rhs),
                    Exact(AccessPath(("*", s.fld))),
                )
            ]
        return [Edge(var(s.lhs), lv(1), var(f"{s.rhs}.{s.fld}"), lv(1))]
    if k is ir.Kind.FIELD_STORE:
        if s.through_pointer:
            return [
                Edge(
                    var(s.lhs),
                    Exact(AccessPath(("*", s.fld))),
                    var(s.rhs),
                    lv(1),
                )
            ]
        return [Edge(var(f"{s.lhs}.{s.fld}"), lv(1), var(s.rhs), lv(1))]
    if k is ir.Kind.ALLOC:
        return [Edge(var(s.lhs), lv(1), heap(s.site), lv(0))]
    if k is ir.Kind.FN_ADDR:
        return [Edge(var(s.lhs), lv(1), func(s.callee), lv(0))]
    if k is ir.Kind.ARITH:
        # the result may point anywhere, or be garbage
        out = [Edge(var(s.lhs), lv(1), loc, lv(0)) for loc in universe]
        out.append(Edge(var(s.lhs), lv(1), UNDEF_NODE, lv(0)))
        return out
    if k is ir.Kind.RET and s.rhs is not None:
        return [Edge(var(proc.ret_var), lv(1), var(s.rhs), lv(1))]
    return []


# ----------------------------------------------------------------------------
# Graph update
# ----------------------------------------------------------------------------


def defs_of(edges: Iterable[Edge]) -> set[tuple[Node, Exact]]:
    out = set()
    for e in edges:
        assert not e.is_aggregate
        out.add((e.src, e.src_lev))
    return out


def must_pointer_edge(e: Edge, delta: SummaryGraph) -> bool:
    """Is e the one and only binding its source cell can have after delta?

    Two things have to hold.  First, uniqueness: no other non-aggregate edge
    in delta writes the same (source, level) cell with a different value.
    Second, definiteness: the bookkeeping edges show the cell cannot still
    hold whatever it held at entry.  For a level-1 source that means the
    copy edge is gone; for a deeper source it means the catch-all no longer
    admits that level.

    Note this is deliberately stricter than the kill gate used during the
    build (see calls.must_defined): a cell can be definitely rewritten yet
    hold two possible values, one per branch, and then no single edge is a
    must edge even though the entry value is dead.
    """
    if delta.is_top or e.is_aggregate:
        return False
    lev = e.src_lev
    if not isinstance(lev, Exact) or lev.path.overflowed or not lev.path.pure:
        return False
    name = base_name_of(e.src)
    if name is None:
        return False
    for other in delta.edges:
        if other.is_aggregate:
            continue
        if other.src == e.src and other.src_lev == e.src_lev:
            if other.tgt != e.tgt or other.tgt_lev != e.tgt_lev:
                return False
    if lev.length == 1:
        return not delta.has_entry_copy(name)
    return not delta.aggregate_covers(name, lev.length)


def base_name_of(node: Node) -> Optional[str]:
    if node.kind in (NodeKind.VAR, NodeKind.ENTRY):
        return node.name
    return None


def written_cell_level(
    node: Node, lev: Exact, levels: Mapping[str, Optional[int]]
) -> Optional[int]:
    """Indirection level of the cell a def overwrites, None when unknown."""
    if not lev.path.pure or lev.path.overflowed:
        return None
    name = base_name_of(node)
    if name is None:
        return None
    base = levels.get(name, 0)
    if base is None:
        return None
    return base - (lev.length - 1)


def mark_threats(
    X: set[Edge],
    s: ir.Stmt,
    strong: bool,
    levels: Mapping[str, Optional[int]],
) -> Threats | bool:
    """Threat levels if this statement must be recorded as an indirect
    assignment; False when it needs no mark."""
    through_pointer = s.kind is ir.Kind.STORE or (
        s.kind is ir.Kind.FIELD_STORE and s.through_pointer
    )
    deep = [e for e in X if e.src_lev.length > 1]
    if not deep and not (through_pointer and not strong):
        return False
    out: set[int] = set()
    for e in X:
        cell = written_cell_level(e.src, e.src_lev, levels)
        if cell is None:
            return None
        out.add(cell)
    return frozenset(out)


def gpg_update(
    graph: SummaryGraph,
    X: set[Edge],
    rank: Rank,
    levels: Mapping[str, Optional[int]],
    escaped: set[str],
    opts: BuildOpts,
    force_weak: bool = False,
    must_override: Optional[bool] = None,
    protected: Iterable[Edge] = (),
) -> SummaryGraph:
    """Fold a reduced edge set into the graph, strongly when justified.

    ``must_override`` replaces the |def|=1 test's verdict about whether the
    single written location is certain (used by call composition, which
    judges certainty against the callee's own summary).  ``protected``
    edges are never killed.
    """
    if not X:
        return graph
    if opts.no_boundary:
        force_weak = True
    defs = defs_of(X)
    strong = not force_weak and len(defs) == 1
    if strong and must_override is not None:
        strong = must_override
    remove: set[Edge] = set()
    add: list[tuple[Edge, Rank]] = [(e, rank) for e in X]
    if strong:
        (dnode, dlev), = defs
        # one allocation site stands for arbitrarily many cells, so a
        # write through it never certainly replaces anything
        if dnode.kind not in (NodeKind.VAR, NodeKind.ENTRY):
            strong = False
        name = base_name_of(dnode)
        if name is not None and name in escaped:
            strong = False
    if strong:
        protected_set = set(protected)
        matches = {
            e
            for e in graph.edges
            if not e.is_aggregate
            and e.src == dnode
            and e.src_lev == dlev
            and e not in protected_set
        }
        remove |= matches
        # a definite write at level i through x also invalidates level i of
        # the entry bookkeeping, when x still holds its entry value
        narrow_name: Optional[str] = None
        if dnode.kind is NodeKind.ENTRY:
            narrow_name = name
        elif dnode.kind is NodeKind.VAR and dlev.length == 1:
            # rewriting the cell itself: level 1 of the entry lens is gone
            # no matter what the cell used to hold
            narrow_name = name
        elif (
            dnode.kind is NodeKind.VAR
            and dlev.length > 1
            and graph.has_entry_copy(name or "")
        ):
            narrow_name = name
            twin = entry(name)
            remove |= {
                e
                for e in graph.edges
                if not e.is_aggregate
                and e.src == twin
                and e.src_lev == dlev
                and e not in protected_set
            }
        if (
            narrow_name is not None
            and dlev.path.pure
            and not dlev.path.overflowed
        ):
            agg = graph.aggregate_for(narrow_name)
            if agg is not None:
                new_excl = agg.src_lev.excluded | {dlev.length}
                remove.add(agg)
                add.append(
                    (
                        Edge(
                            agg.src,
                            AllExcept(new_excl),
                            agg.tgt,
                            agg.tgt_lev,
                        ),
                        BOUNDARY_RANK,
                    )
                )
    return graph.replace(remove, add)


def limit_edge(e: Edge, k: Optional[int]) -> Edge:
    if k is None:
        return e
    src_lev = e.src_lev
    if isinstance(src_lev, Exact):
        src_lev = Exact(src_lev.path.limited(k))
    return Edge(e.src, src_lev, e.tgt, Exact(e.tgt_lev.path.limited(k)))


# ----------------------------------------------------------------------------
# Per-procedure fixed point
# ----------------------------------------------------------------------------

# A call resolver takes (rpo index, statement, graph before the call) and
# returns the graph after the call plus the callee targets it resolved.
CallResolver = Callable[[int, ir.Stmt, SummaryGraph], tuple[SummaryGraph, list]]


def make_ctx(proc: ir.Proc, levels: Mapping[str, Optional[int]]) -> ComposeCtx:
    succ_map = {m + 1: frozenset(t + 1 for t in proc.cfg.succ.get(m, ())
                                 if t < proc.cfg.end_point)
                for m in range(len(proc.cfg.stmts))}
    succ_map[0] = frozenset({1}) if proc.cfg.stmts else frozenset()

    def succ(m: int) -> frozenset[int]:
        return succ_map.get(m, frozenset())

    return ComposeCtx(succ=succ, level_of=lambda name: levels.get(name, 0))


def build_intra(
    prog: ir.Program,
    proc: ir.Proc,
    levels: Mapping[str, Optional[int]],
    escaped: set[str],
    opts: BuildOpts,
    resolve_call: CallResolver,
    universe: Optional[list[Node]] = None,
) -> ProcSummaries:
    """Least fixed point of the summary transfer over the procedure CFG."""
    cfg = proc.cfg
    boundary = boundary_gpg(prog, proc.name, levels, opts)
    ctx = make_ctx(proc, levels)
    if universe is None:
        universe = location_universe(prog)

    n = len(cfg.stmts)
    state: dict[int, SummaryGraph] = {i: TOP for i in range(n + 1)}
    call_targets: dict[int, list] = {}

    def in_of(i: int) -> SummaryGraph:
        acc = boundary if i == 0 else TOP
        for p in cfg.pred.get(i, ()):
            acc = acc.meet(state[p])
        return acc

    visits = [0] * (n + 1)
    work = list(range(n))
    on_work = set(work)
    while work:
        i = work.pop(0)
        on_work.discard(i)
        delta = in_of(i)
        if delta.is_top:
            out = TOP
        else:
            out = _transfer(
                prog, proc, i, delta, levels, escaped, opts, ctx,
                resolve_call, call_targets, universe,
            )
        if out == state[i]:
            continue
        visits[i] += 1
        if visits[i] > opts.iteration_cap:
            raise FuelExhausted(
                f"{proc.name}: point {i} failed to stabilize within "
                f"{opts.iteration_cap} rounds"
            )
        state[i] = out
        for t in cfg.succ.get(i, ()):
            if t < n and t not in on_work:
                work.append(t)
                on_work.add(t)

    points: dict[int, SummaryGraph] = {}
    for i in range(n):
        d = in_of(i)
        points[i] = boundary if d.is_top and i == 0 else d
    end_delta = in_of(n) if n else boundary
    if end_delta.is_top:
        end_delta = boundary
    points[n] = end_delta
    return ProcSummaries(proc.name, points, end_delta, call_targets)


def _transfer(
    prog: ir.Program,
    proc: ir.Proc,
    i: int,
    delta: SummaryGraph,
    levels: Mapping[str, Optional[int]],
    escaped: set[str],
    opts: BuildOpts,
    ctx: ComposeCtx,
    resolve_call: CallResolver,
    call_targets: dict[int, list],
    universe: list[Node],
) -> SummaryGraph:
    s = proc.cfg.stmts[i]
    rank: Rank = (i + 1, 0)

    if s.kind is ir.Kind.CALL:
        out, targets = resolve_call(i, s, delta)
        call_targets[i] = targets
        return out

    raw = stmt_edges(s, proc, universe)
    if not raw:
        return delta
    X: set[Edge] = set()
    for e in raw:
        X |= {limit_edge(r, opts.k_limit) for r in reduce_edge(e, rank, delta, ctx)}
    force_weak = s.kind is ir.Kind.ARITH
    out = gpg_update(
        delta, X, rank, levels, escaped, opts, force_weak=force_weak
    )
    threats = mark_threats(
        X, s, _was_strong(X, escaped, force_weak or opts.no_boundary), levels
    )
    if threats is not False:
        out = out.replace((), (), extra_marks={rank: threats})
    return out


def _was_strong(X: set[Edge], escaped: set[str], force_weak: bool) -> bool:
    if force_weak:
        return False
    defs = defs_of(X)
    if len(defs) != 1:
        return False
    (dnode, _), = defs
    if dnode.kind not in (NodeKind.VAR, NodeKind.ENTRY):
        return False
    name = base_name_of(dnode)
    return not (name is not None and name in escaped)
