"""Core value types for bounded pointer summaries.

A summary graph records facts of the form ``x -(i,j)-> y``: the set of
locations reached by i dereferences from x includes everything reached by
j dereferences from y.  With i=1, j=0 this degenerates to the classical
points-to fact "x points to y".  Levels generalize to access paths (mixes
of dereference and field steps) so the same machinery covers structs and
heap cells.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum, auto
from typing import Iterable, Iterator, Mapping, Optional

DEREF = "*"

# Rank of an edge: (statement index + 1, sub index).  Boundary edges sit at
# major 0; edges imported by a call share the call's major with sub indices
# preserving the callee's own order.
Rank = tuple[int, int]

BOUNDARY_RANK: Rank = (0, 0)


class NodeKind(Enum):
    VAR = auto()
    ENTRY = auto()  # the value a variable held on procedure entry, rendered x'
    HEAP = auto()  # allocation site
    SUMMARY = auto()  # stand-in for unknown caller-side locations, rendered s
    FUNC = auto()  # a function used as a value
    UNDEF = auto()  # rendered ?


@dataclass(frozen=True, order=True)
class Node:
    kind_order: int
    name: str

    @property
    def kind(self) -> NodeKind:
        return NodeKind(self.kind_order)

    def render(self) -> str:
        k = self.kind
        if k is NodeKind.ENTRY:
            return self.name + "'"
        if k is NodeKind.SUMMARY:
            return "s"
        if k is NodeKind.UNDEF:
            return "?"
        if k is NodeKind.FUNC:
            return self.name + "()"
        return self.name

    def __repr__(self) -> str:  # pragma: no cover
        return f"Node({self.render()})"


def var(name: str) -> Node:
    return Node(NodeKind.VAR.value, name)


def entry(name: str) -> Node:
    """Entry version of a variable: its value at procedure start."""
    return Node(NodeKind.ENTRY.value, name)


def heap(site: str) -> Node:
    return Node(NodeKind.HEAP.value, site)


def func(name: str) -> Node:
    return Node(NodeKind.FUNC.value, name)


SUMMARY_NODE = Node(NodeKind.SUMMARY.value, "s")
UNDEF_NODE = Node(NodeKind.UNDEF.value, "?")


class NotAPrefix(Exception):
    """Raised when an access path remainder does not exist."""


@dataclass(frozen=True)
class AccessPath:
    """A sequence of memory steps, each a dereference or a field lookup.

    ``overflowed`` marks a path truncated by the depth limit; such a path
    stands for its first k steps followed by any number of further
    field-insensitive steps, so two overflowed paths with equal prefixes
    are equal.
    """

    steps: tuple[str, ...] = ()
    overflowed: bool = False

    @staticmethod
    def of_level(n: int) -> AccessPath:
        return AccessPath((DEREF,) * n)

    @property
    def length(self) -> int:
        return len(self.steps)

    @property
    def pure(self) -> bool:
        return all(s == DEREF for s in self.steps) and not self.overflowed

    def limited(self, k: int) -> AccessPath:
        """Truncate to at most k steps (idempotent)."""
        if self.length <= k:
            return self
        return AccessPath(self.steps[:k], True)

    def concat(self, other: AccessPath) -> AccessPath:
        if self.overflowed:
            # anything appended beyond the summarized tail is absorbed
            return self
        return AccessPath(self.steps + other.steps, other.overflowed)

    def remainder_after(self, prefix: AccessPath) -> AccessPath:
        """The suffix such that prefix ++ suffix == self."""
        if prefix.overflowed:
            raise NotAPrefix(f"{prefix} is summarized, no exact remainder")
        if self.steps[: prefix.length] != prefix.steps:
            raise NotAPrefix(f"{prefix} is not a prefix of {self}")
        return AccessPath(self.steps[prefix.length :], self.overflowed)

    def is_prefix_of(self, other: AccessPath) -> bool:
        return (
            not self.overflowed
            and other.steps[: self.length] == self.steps
        )

    def render(self) -> str:
        body = ",".join(self.steps)
        tail = ",#" if self.overflowed else ""
        return f"[{body}{tail}]"

    def __repr__(self) -> str:  # pragma: no cover
        return f"AccessPath({self.render()})"


@dataclass(frozen=True)
class Exact:
    """An exact level: a concrete access path."""

    path: AccessPath

    @property
    def length(self) -> int:
        return self.path.length

    def render(self) -> str:
        if self.path.pure:
            return str(self.path.length)
        return self.path.render()


@dataclass(frozen=True)
class AllExcept:
    """Every positive level except the excluded ones.

    Legal only on the catch-all edge from an entry version to the summary
    node; it records which levels a procedure has definitely overwritten.
    """

    excluded: frozenset[int] = frozenset()

    def render(self) -> str:
        if not self.excluded:
            return "ℕ"
        inner = ",".join(str(i) for i in sorted(self.excluded))
        return "ℕ−{" + inner + "}"


Level = "Exact | AllExcept"


def lv(n: int) -> Exact:
    return Exact(AccessPath.of_level(n))


@dataclass(frozen=True)
class Edge:
    src: Node
    src_lev: Exact | AllExcept
    tgt: Node
    tgt_lev: Exact

    def __post_init__(self) -> None:
        assert self.src.kind is not NodeKind.UNDEF, "? cannot be written"
        if isinstance(self.src_lev, Exact):
            assert self.src_lev.length >= 1, "source level must be at least 1"
        else:
            assert (
                self.src.kind is NodeKind.ENTRY
                and self.tgt.kind is NodeKind.SUMMARY
                and self.tgt_lev == lv(0)
            ), "catch-all levels only appear on entry-to-summary edges"

    @property
    def is_aggregate(self) -> bool:
        return isinstance(self.src_lev, AllExcept)

    def is_copy_of(self, name: str) -> bool:
        return (
            self.src == var(name)
            and self.src_lev == lv(1)
            and self.tgt == entry(name)
            and self.tgt_lev == lv(1)
        )

    @property
    def is_entry_copy(self) -> bool:
        return (
            self.src.kind is NodeKind.VAR
            and self.tgt.kind is NodeKind.ENTRY
            and self.src.name == self.tgt.name
            and self.src_lev == lv(1)
            and self.tgt_lev == lv(1)
        )

    @property
    def is_boundary(self) -> bool:
        return self.is_aggregate or self.is_entry_copy

    def render(self) -> str:
        return (
            f"{self.src.render()} -({self.src_lev.render()},"
            f"{self.tgt_lev.render()})-> {self.tgt.render()}"
        )

    def __repr__(self) -> str:  # pragma: no cover
        return f"Edge({self.render()})"

    def sort_key(self):
        return (
            self.src.render(),
            self.src_lev.render(),
            self.tgt.render(),
            self.tgt_lev.render(),
        )


def edge(src: Node, i, j, tgt: Node) -> Edge:
    """Convenience constructor accepting ints, AccessPaths, or level specs."""

    def to_level(x):
        if isinstance(x, (Exact, AllExcept)):
            return x
        if isinstance(x, AccessPath):
            return Exact(x)
        return lv(x)

    return Edge(src, to_level(i), tgt, to_level(j))


def copy_edge(name: str) -> Edge:
    return Edge(var(name), lv(1), entry(name), lv(1))


def aggregate_edge(name: str, excluded: Iterable[int] = ()) -> Edge:
    return Edge(entry(name), AllExcept(frozenset(excluded)), SUMMARY_NODE, lv(0))


# ----------------------------------------------------------------------------
# Summary graphs
# ----------------------------------------------------------------------------

# Threat levels an indirect assignment may overwrite; None means unknown,
# which threatens every level.
Threats = Optional[frozenset[int]]


class SummaryGraph:
    """An ordered set of summary edges, or the artificial TOP element.

    TOP is the seed for in-progress recursive callees: it kills every fact
    and generates none, so the meet (set union extended with an absorbing
    TOP) can only refine it.  ``order`` maps each edge to the rank of the
    statement that produced it; ``marks`` maps ranks of statements that
    assign through a pointer to the cell levels they may overwrite.
    """

    __slots__ = ("is_top", "edges", "order", "marks")

    def __init__(
        self,
        edges: Iterable[Edge] = (),
        order: Mapping[Edge, Rank] | None = None,
        marks: Mapping[Rank, Threats] | None = None,
        is_top: bool = False,
    ) -> None:
        self.is_top = is_top
        if is_top:
            self.edges = frozenset()
            self.order = {}
            self.marks = {}
            return
        self.edges = frozenset(edges)
        order = dict(order or {})
        self.order = {e: order.get(e, BOUNDARY_RANK) for e in self.edges}
        self.marks = dict(marks or {})

    def __eq__(self, other) -> bool:
        if not isinstance(other, SummaryGraph):
            return NotImplemented
        if self.is_top or other.is_top:
            return self.is_top and other.is_top
        return (
            self.edges == other.edges
            and self.order == other.order
            and self.marks == other.marks
        )

    def __hash__(self) -> int:  # graphs are used as dict values only
        if self.is_top:
            return hash("top")
        return hash(self.edges)

    def __repr__(self) -> str:  # pragma: no cover
        if self.is_top:
            return "SummaryGraph.TOP"
        inner = ", ".join(e.render() for e in self.edges_in_order())
        return f"SummaryGraph({{{inner}}})"

    # -- queries ------------------------------------------------------------

    def edges_in_order(self) -> list[Edge]:
        return sorted(self.edges, key=lambda e: (self.order[e], e.sort_key()))

    def nonboundary_edges(self) -> list[Edge]:
        return [e for e in self.edges_in_order() if not e.is_boundary]

    def nodes(self) -> set[Node]:
        out: set[Node] = set()
        for e in self.edges:
            out.add(e.src)
            out.add(e.tgt)
        return out

    def max_level(self) -> int:
        best = 1
        for e in self.edges:
            if isinstance(e.src_lev, Exact):
                best = max(best, e.src_lev.length)
            best = max(best, e.tgt_lev.length)
        return best

    def edges_from(self, node: Node) -> list[Edge]:
        return [e for e in self.edges_in_order() if e.src == node]

    def has_entry_copy(self, name: str) -> bool:
        return copy_edge(name) in self.edges

    def aggregate_for(self, name: str) -> Edge | None:
        for e in self.edges:
            if e.is_aggregate and e.src == entry(name):
                return e
        return None

    def aggregate_covers(self, name: str, level: int) -> bool:
        """Does the catch-all edge for name still admit the given level?"""
        agg = self.aggregate_for(name)
        if agg is None:
            return False
        return level not in agg.src_lev.excluded

    # -- lattice ------------------------------------------------------------

    def meet(self, other: SummaryGraph) -> SummaryGraph:
        if self.is_top:
            return other
        if other.is_top:
            return self
        edges: set[Edge] = set()
        order: dict[Edge, Rank] = {}
        aggs: dict[Node, frozenset[int]] = {}
        for g in (self, other):
            for e in g.edges:
                if e.is_aggregate:
                    prev = aggs.get(e.src)
                    excl = e.src_lev.excluded
                    # a level survives into the merged exclusion set only if
                    # both sides excluded it (it was overwritten on all paths)
                    aggs[e.src] = excl if prev is None else (prev & excl)
                    continue
                edges.add(e)
                r = g.order[e]
                if e not in order or r < order[e]:
                    order[e] = r
        for node, excl in aggs.items():
            e = Edge(node, AllExcept(excl), SUMMARY_NODE, lv(0))
            edges.add(e)
            order[e] = BOUNDARY_RANK
        marks: dict[Rank, Threats] = dict(self.marks)
        for r, t in other.marks.items():
            if r in marks:
                marks[r] = None if (marks[r] is None or t is None) else (marks[r] | t)
            else:
                marks[r] = t
        return SummaryGraph(edges, order, marks)

    def leq(self, other: SummaryGraph) -> bool:
        if other.is_top:
            return True
        if self.is_top:
            return False
        return self.nodes() >= other.nodes() and self.edges >= other.edges

    # -- rewriting ----------------------------------------------------------

    def replace(
        self,
        remove: Iterable[Edge],
        add: Iterable[tuple[Edge, Rank]],
        extra_marks: Mapping[Rank, Threats] | None = None,
    ) -> SummaryGraph:
        assert not self.is_top
        removed = set(remove)
        edges = {e for e in self.edges if e not in removed}
        order = {e: r for e, r in self.order.items() if e not in removed}
        for e, r in add:
            edges.add(e)
            if e not in order or r < order[e]:
                order[e] = r
        marks = dict(self.marks)
        for r, t in (extra_marks or {}).items():
            if r in marks:
                marks[r] = None if (marks[r] is None or t is None) else (marks[r] | t)
            else:
                marks[r] = t
        return SummaryGraph(edges, order, marks)

    # -- output -------------------------------------------------------------

    def to_dot(self, name: str = "summary") -> str:
        """Deterministic DOT rendering (nodes lexicographic, edges sorted)."""
        if self.is_top:
            return f'digraph "{name}" {{\n  top [label="TOP"];\n}}\n'
        ids: dict[Node, str] = {}
        for i, node in enumerate(sorted(self.nodes(), key=lambda n: n.render())):
            ids[node] = f"n{i}"
        lines = [f'digraph "{name}" {{']
        for node, nid in sorted(ids.items(), key=lambda kv: kv[1]):
            shape = "box" if node.kind is NodeKind.SUMMARY else "ellipse"
            lines.append(f'  {nid} [label="{node.render()}" shape={shape}];')
        for e in sorted(self.edges, key=lambda e: e.sort_key()):
            label = f"{e.src_lev.render()},{e.tgt_lev.render()}"
            lines.append(f'  {ids[e.src]} -> {ids[e.tgt]} [label="{label}"];')
        lines.append("}")
        return "\n".join(lines) + "\n"


TOP = SummaryGraph(is_top=True)


def graph_of(edges: Iterable[Edge], start_rank: int = 1) -> SummaryGraph:
    """Build a graph giving consecutive major ranks to the listed edges.

    Handy in tests; real construction assigns ranks from statement indices.
    """
    order = {}
    for i, e in enumerate(edges):
        order[e] = (start_rank + i, 0)
    return SummaryGraph(order.keys(), order)
