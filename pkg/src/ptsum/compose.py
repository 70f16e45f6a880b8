"""Edge composition and reduction.

A new edge n is simplified by composing it with an existing edge p that
shares a pivot node.  Composition substitutes what p says about the pivot
into n, lowering the indirection on n's endpoints.  Whether the result may
replace n depends on three separate questions:

* structure: do the access paths line up (prefix relations), and does the
  result stay within n's indirection bounds?
* conclusiveness: does p still describe the pivot when control reaches n's
  statement, or could an intervening assignment through a pointer have
  changed the pivot's content?
* coverage: a statement's edge is replaced only by compositions against
  edges that resolve its source and target; partial resolutions keep the
  original edge alive.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum, auto
from typing import Callable, Iterable, Optional

from .graph import (
    AccessPath,
    AllExcept,
    Edge,
    Exact,
    Node,
    NodeKind,
    NotAPrefix,
    Rank,
    SummaryGraph,
    Threats,
    lv,
)


class PivotRole(Enum):
    """Where the shared node sits: (position in n, position in p)."""

    SOURCE_SOURCE = auto()
    TARGET_SOURCE = auto()
    SOURCE_TARGET = auto()
    TARGET_TARGET = auto()


@dataclass(frozen=True)
class Desirable:
    edge: Edge


class NotUseful:
    """Relevant but the composition would raise indirection, keep n as is."""


class Irrelevant:
    """p talks about a location n does not depend on."""


class NoComposition:
    """No shared pivot, or an operand that never composes."""


class Inconclusive:
    """Structurally desirable but p may be stale at n's statement."""


Verdict = "Desirable | type"

NOT_USEFUL = NotUseful
IRRELEVANT = Irrelevant
NO_COMPOSITION = NoComposition
INCONCLUSIVE = Inconclusive


def _composable(e: Edge) -> bool:
    if isinstance(e.src_lev, AllExcept):
        return False
    if e.tgt.kind is NodeKind.UNDEF:
        return False
    return True


def compose(n: Edge, p: Edge, role: PivotRole):
    """Structural composition of n with supplier p at the given pivot role.

    Returns Desirable(result), NOT_USEFUL, IRRELEVANT, or NO_COMPOSITION.
    Staleness (conclusiveness) is checked separately.
    """
    if not (_composable(n) and _composable(p)):
        return NO_COMPOSITION

    i: AccessPath = n.src_lev.path
    j: AccessPath = n.tgt_lev.path
    k: AccessPath = p.src_lev.path
    l: AccessPath = p.tgt_lev.path

    # The degree-reduction bound (a composition may never raise the
    # indirection of the edge it simplifies) is what keeps pure pointer
    # chains finite.  Field chains are allowed to grow, one access at a
    # time, and are cut off separately by depth limiting.
    bounded = i.pure and j.pure and k.pure and l.pure

    if role is PivotRole.SOURCE_SOURCE:
        if n.src != p.src:
            return NO_COMPOSITION
        # p defines the pivot at depth k; it feeds n's source (depth i) only
        # when the write happens strictly above what n defines
        if k.is_prefix_of(i) and k.length < i.length:
            if bounded and l.length > k.length:
                return NOT_USEFUL
            try:
                new_src = l.concat(i.remainder_after(k))
            except NotAPrefix:
                return NOT_USEFUL
            return Desirable(Edge(p.tgt, Exact(new_src), n.tgt, Exact(j)))
        return IRRELEVANT

    if role is PivotRole.TARGET_SOURCE:
        if n.tgt != p.src:
            return NO_COMPOSITION
        if not k.is_prefix_of(j):
            return NOT_USEFUL
        if bounded and l.length > k.length:
            return NOT_USEFUL
        try:
            new_tgt = l.concat(j.remainder_after(k))
        except NotAPrefix:
            return NOT_USEFUL
        return Desirable(Edge(n.src, Exact(i), p.tgt, Exact(new_tgt)))

    if role is PivotRole.SOURCE_TARGET:
        if n.src != p.tgt:
            return NO_COMPOSITION
        if l.is_prefix_of(i) and l.length < i.length:
            if bounded and k.length > l.length:
                return NOT_USEFUL
            try:
                new_src = k.concat(i.remainder_after(l))
            except NotAPrefix:
                return NOT_USEFUL
            return Desirable(Edge(p.src, Exact(new_src), n.tgt, Exact(j)))
        return IRRELEVANT

    if role is PivotRole.TARGET_TARGET:
        if n.tgt != p.tgt:
            return NO_COMPOSITION
        if not l.is_prefix_of(j):
            return NOT_USEFUL
        if bounded and k.length > l.length:
            return NOT_USEFUL
        try:
            new_tgt = k.concat(j.remainder_after(l))
        except NotAPrefix:
            return NOT_USEFUL
        return Desirable(Edge(n.src, Exact(i), p.src, Exact(new_tgt)))

    raise AssertionError(role)


# ----------------------------------------------------------------------------
# Conclusiveness
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class ComposeCtx:
    """What the staleness check needs to know about the enclosing procedure.

    ``succ`` maps a statement-level rank major to the majors of its control
    flow successors (the boundary major 0 precedes the first statement).
    ``level_of`` gives the inferred indirection level of a variable name,
    or None when unknown.  ``always`` short-circuits the staleness check;
    it is what a straight-line replay over a single known path uses, where
    every supplier is by construction still live.

    ``stale_names`` and ``stale_levels`` mark cells a call being spliced in
    may have rewritten: suppliers describing such a cell from before the
    call cannot be trusted across it.  Facts born at the call itself are
    exempt (they already account for the callee).  ``stale_levels`` follows
    the Threats convention, None meaning every level.
    """

    succ: Callable[[int], frozenset[int]]
    level_of: Callable[[str], Optional[int]]
    always: bool = False
    stale_names: frozenset[str] = frozenset()
    stale_levels: Threats = frozenset()


TRIVIAL_CTX = ComposeCtx(succ=lambda m: frozenset(), level_of=lambda name: None)
ALWAYS_CTX = ComposeCtx(
    succ=lambda m: frozenset(), level_of=lambda name: None, always=True
)


def _base_name(node: Node) -> Optional[str]:
    if node.kind in (NodeKind.VAR, NodeKind.ENTRY):
        return node.name
    return None


def conclusive(
    p: Edge,
    p_rank: Rank,
    n_rank: Rank,
    graph: SummaryGraph,
    ctx: ComposeCtx,
) -> bool:
    """May p's description of its source still hold at n's statement?

    True when p's statement is immediately followed by n's on every path,
    or when no intervening assignment through a pointer can overwrite the
    cell p describes.  The second test only applies when p pins down a
    direct pointee (source depth exactly one); deeper suppliers are dropped
    pessimistically whenever the two statements are not consecutive.
    """
    if ctx.always:
        return True
    pm, nm = p_rank[0], n_rank[0]
    if pm == nm:
        # facts born at the same statement (call imports, bindings) are
        # sequenced within it and cannot be interleaved with other stores
        return True
    if ctx.stale_names or ctx.stale_levels is None or ctx.stale_levels:
        base0 = _base_name(p.src)
        if base0 is None:
            return False
        if base0 in ctx.stale_names:
            return False
        lvl0 = ctx.level_of(base0)
        if ctx.stale_levels is None:
            return False
        if lvl0 is None and ctx.stale_levels:
            return False
        if lvl0 is not None and lvl0 in ctx.stale_levels:
            return False
    if ctx.succ(pm) == frozenset({nm}):
        return True

    if not isinstance(p.src_lev, Exact) or p.src_lev.length != 1:
        return False

    base = _base_name(p.src)
    base_level = ctx.level_of(base) if base is not None else None

    if pm < nm:
        between = [r for r in graph.marks if pm < r[0] < nm]
    else:
        # the supplier reaches n around a cycle, any store in the procedure
        # may intervene
        between = list(graph.marks)
    for r in between:
        threats = graph.marks[r]
        if threats is None:
            return False
        if base_level is None:
            return False
        # the store overwrites cells at the given levels; p's source names a
        # cell at the level of its base variable
        if base_level in threats:
            return False
    return True


# ----------------------------------------------------------------------------
# Reduction
# ----------------------------------------------------------------------------


class FuelExhausted(Exception):
    """Reduction failed to stabilize within the structural bound."""


def _join(ss: Edge, ts: Edge) -> Edge:
    """Pair a source resolution with a target resolution of the same edge."""
    return Edge(ss.src, ss.src_lev, ts.tgt, ts.tgt_lev)


def reduce_edge(
    n: Edge,
    n_rank: Rank,
    graph: SummaryGraph,
    ctx: ComposeCtx,
) -> set[Edge]:
    """Fully reduce n against the graph, to a set of simplified edges.

    Runs source and target resolutions to a fixed point.  When a supplier
    is structurally desirable but possibly stale, the edge being reduced is
    kept alongside whatever the conclusive suppliers produce.
    """
    if graph.is_top:
        return {n}
    fuel = max(1, len(graph.nodes())) * max(
        graph.max_level(),
        n.src_lev.length if isinstance(n.src_lev, Exact) else 1,
        n.tgt_lev.length,
        1,
    )
    current: set[Edge] = {n}
    for _ in range(fuel + 1):
        nxt: set[Edge] = set()
        for e in current:
            nxt |= _reduce_once(e, n_rank, graph, ctx)
        if nxt == current:
            return current
        current = nxt
    raise FuelExhausted(f"reduction of {n.render()} did not stabilize")


def _reduce_once(
    n: Edge,
    n_rank: Rank,
    graph: SummaryGraph,
    ctx: ComposeCtx,
) -> set[Edge]:
    ss: set[Edge] = set()
    ts: set[Edge] = set()
    keep_n = False

    for p in graph.edges:
        if p == n:
            continue
        for role, bucket in (
            (PivotRole.SOURCE_SOURCE, ss),
            (PivotRole.TARGET_SOURCE, ts),
        ):
            v = compose(n, p, role)
            if isinstance(v, Desirable):
                if conclusive(p, graph.order[p], n_rank, graph, ctx):
                    bucket.add(v.edge)
                else:
                    keep_n = True

    if ss and ts:
        out = {_join(a, b) for a in ss for b in ts}
    elif not ss and not ts:
        out = {n}
    else:
        out = ss | ts
    if keep_n:
        out.add(n)
    return out
