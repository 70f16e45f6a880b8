"""Call composition and the whole-program summary engine.

A call site splices the callee's summary into the caller's graph: formals
are bound to actuals, the callee's recorded effects are replayed with its
entry placeholders swapped for the caller's own knowledge at the call, and
the return value lands in the receiver.  Summaries are memoized per
(procedure, function-pointer context); recursive cycles start from an
absorbing seed and are re-iterated until every summary is consistent with
the ones it consumed.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Mapping, Optional

from . import ir
from .build import (
    AnalysisError,
    BuildOpts,
    ProcSummaries,
    base_name_of,
    boundary_gpg,
    build_intra,
    gpg_update,
    limit_edge,
    location_universe,
    make_ctx,
)
from .compose import ComposeCtx, reduce_edge
from .graph import (
    AccessPath,
    Edge,
    Exact,
    Node,
    NodeKind,
    Rank,
    SummaryGraph,
    Threats,
    TOP,
    entry,
    lv,
    var,
)


def _display(name: str) -> str:
    return name.split("::", 1)[1] if "::" in name else name


# ----------------------------------------------------------------------------
# Certainty of callee writes
# ----------------------------------------------------------------------------


def must_defined(e: Edge, delta: SummaryGraph) -> bool:
    """Is the cell this callee edge writes certainly written on every path?

    Judged against the callee's own summary.  A direct write to a variable
    is certain when the variable's entry copy is gone (every path through
    the callee redefined it).  A deeper write is certain when the entry
    bookkeeping no longer admits that depth.  Heap cells and field paths
    are never certain: one abstract location stands for many cells.
    """
    if delta.is_top:
        return False
    lev = e.src_lev
    if not isinstance(lev, Exact) or lev.path.overflowed or not lev.path.pure:
        return False
    src = e.src
    if src.kind is NodeKind.ENTRY and lev.length == 1:
        # the caller's binding itself is not ours to rewrite
        return False
    if src.kind not in (NodeKind.ENTRY, NodeKind.VAR):
        return False
    # certainty needs a positive witness: the catch-all for this name was
    # present (the callee tracked it at all) and no longer admits the
    # written level (every path through the callee overwrote it).  A bare
    # direct edge without that bookkeeping may come from a path the callee
    # only might take, or from analysis with bookkeeping off.
    agg = delta.aggregate_for(src.name)
    if agg is None:
        return False
    return lev.length in agg.src_lev.excluded


# ----------------------------------------------------------------------------
# Splicing one callee
# ----------------------------------------------------------------------------


def _entry_variants(
    name: str,
    lev: Exact,
    pre: SummaryGraph,
    levels: Mapping[str, Optional[int]],
) -> set[tuple[Node, Exact]]:
    """Caller-side phrasings of a callee endpoint written name'.

    The callee phrased its fact against the value name held when the call
    was made; ``pre`` is the caller's graph at exactly that moment.  Each
    direct binding the caller knows yields one phrasing with the binding
    spliced in for the first step.  A surviving entry copy means the call
    may still see the caller's own entry value, so the endpoint also
    survives in entry form.  When an assignment through a pointer may have
    rewritten the cell, the direct bindings are not the whole story: the
    plain variable is kept as a fallback.  Plain phrasings stay sound
    because imports land in rank order, so at replay time the fact reads
    exactly the state the call saw.
    """
    rest = AccessPath(lev.path.steps[1:], lev.path.overflowed)
    out: set[tuple[Node, Exact]] = set()
    for e in pre.edges:
        if e.is_aggregate or e.src != var(name) or e.src_lev != lv(1):
            continue
        if e.is_entry_copy:
            out.add((entry(name), lev))
            continue
        out.add((e.tgt, Exact(e.tgt_lev.path.concat(rest))))
    base = levels.get(name, 0)
    complete = True
    for threats in pre.marks.values():
        if threats is None or base is None or base in threats:
            complete = False
            break
    if not out or not complete:
        out.add((var(name), lev))
    return out


def _import_variants(
    orig: Edge,
    pre: SummaryGraph,
    levels: Mapping[str, Optional[int]],
) -> set[Edge]:
    """Phrase one callee effect in the caller's terms.

    Entry endpoints rebind to what the caller knew at the call; everything
    else imports verbatim.  Plain variable references inside the callee
    (an inconclusive residue of its own reduction) must stay plain: they
    denote the evolving state at the callee's own program point, which the
    rank-ordered replay reproduces, and rebinding them to call-time facts
    would read values the callee may already have overwritten.
    """
    if (
        orig.src.kind is NodeKind.ENTRY
        and isinstance(orig.src_lev, Exact)
        and orig.src_lev.length >= 1
    ):
        src_vs = _entry_variants(orig.src.name, orig.src_lev, pre, levels)
    else:
        src_vs = {(orig.src, orig.src_lev)}
    if orig.tgt.kind is NodeKind.ENTRY and orig.tgt_lev.length >= 1:
        tgt_vs = _entry_variants(orig.tgt.name, orig.tgt_lev, pre, levels)
    else:
        tgt_vs = {(orig.tgt, orig.tgt_lev)}
    out: set[Edge] = set()
    for sn, sl in src_vs:
        if sn.kind is NodeKind.UNDEF:
            continue
        if isinstance(sl, Exact) and sl.length < 1:
            continue
        for tn, tl in tgt_vs:
            out.add(Edge(sn, sl, tn, tl))
    return out


def _distrusting(
    ctx: ComposeCtx,
    final: SummaryGraph,
    levels: Mapping[str, Optional[int]],
) -> ComposeCtx:
    """Copy of ctx that refuses suppliers the callee may have rewritten."""
    names: set[str] = set()
    for e in final.nonboundary_edges():
        if isinstance(e.src_lev, Exact) and e.src_lev.length == 1:
            n = base_name_of(e.src)
            if n is not None:
                names.add(n)
    lvls: set[int] = set()
    stale_levels: Threats = frozenset()
    for t in final.marks.values():
        if t is None:
            stale_levels = None
            break
        lvls |= t
    if stale_levels is not None:
        stale_levels = frozenset(lvls)
    return replace(ctx, stale_names=frozenset(names), stale_levels=stale_levels)


def _compose_one(
    prog: ir.Program,
    caller: ir.Proc,
    rpo: int,
    s: ir.Stmt,
    delta: SummaryGraph,
    callee_name: str,
    final: SummaryGraph,
    levels: Mapping[str, Optional[int]],
    escaped: set[str],
    opts: BuildOpts,
    ctx: ComposeCtx,
) -> SummaryGraph:
    if final.is_top:
        return TOP
    callee = prog.funcs[callee_name]
    if len(s.args) != len(callee.params):
        raise AnalysisError(
            f"line {s.line}: {callee_name} takes {len(callee.params)} "
            f"argument(s), got {len(s.args)}"
        )
    major = rpo + 1
    sub = 1
    acc = delta

    # bind formals to actuals, phrased in the caller's terms; a binding is
    # a definite write no matter what (fresh frame), so the escape set is
    # not consulted
    for formal, actual in zip(callee.params, s.args):
        bind = Edge(var(formal), lv(1), var(actual), lv(1))
        rank: Rank = (major, sub)
        sub += 1
        X = {limit_edge(r, opts.k_limit) for r in reduce_edge(bind, rank, acc, ctx)}
        acc = gpg_update(acc, X, rank, levels, set(), opts, must_override=True)

    # the callee's entry view: what the caller knew, plus the bindings.
    # Every callee edge is resolved against this frozen graph; resolving
    # against the accumulator instead would let earlier imports destroy
    # the call-time facts later imports still need.
    pre = acc

    protected: dict[tuple[Node, object], set[Edge]] = {}
    for orig in final.nonboundary_edges():
        rank = (major, sub)
        sub += 1
        X = {
            limit_edge(v, opts.k_limit)
            for v in _import_variants(orig, pre, levels)
        }
        if not X:
            continue
        # images of the same callee write are alternatives from different
        # paths; they must not strong-kill one another
        group = (orig.src, orig.src_lev)
        shield = protected.setdefault(group, set())
        acc = gpg_update(
            acc,
            X,
            rank,
            levels,
            escaped,
            opts,
            must_override=must_defined(orig, final),
            protected=shield,
        )
        shield |= X

    ret_name = f"ret${callee_name}"
    if s.receiver is not None:
        recv = Edge(var(s.receiver), lv(1), var(ret_name), lv(1))
        rank = (major, sub)
        sub += 1
        # the receiver reads after the callee ran: suppliers from before
        # the call are useless for anything the callee may have rewritten
        rctx = _distrusting(ctx, final, levels)
        X = {limit_edge(r, opts.k_limit) for r in reduce_edge(recv, rank, acc, rctx)}
        acc = gpg_update(acc, X, rank, levels, escaped, opts, must_override=True)

    # the callee's return cell is dead past the call; drop what this call
    # imported for it (a recursive caller's own pending return facts sit
    # at older ranks and survive)
    dead = {
        e
        for e in acc.edges
        if acc.order[e][0] == major
        and ret_name in (base_name_of(e.src), base_name_of(e.tgt))
    }
    if dead:
        acc = acc.replace(dead, ())

    # the call performs whatever indirect stores the callee performs
    if final.marks:
        joined: Threats
        if any(t is None for t in final.marks.values()):
            joined = None
        else:
            u: set[int] = set()
            for t in final.marks.values():
                u |= t
            joined = frozenset(u)
        acc = acc.replace((), (), extra_marks={(major, 0): joined})
    return acc


def _scrub_foreign(g: SummaryGraph, caller: ir.Proc) -> SummaryGraph:
    """Drop edges naming another frame's temporaries; they are out of scope."""
    if g.is_top:
        return g
    own = caller.name + "::"

    def foreign(n: Node) -> bool:
        if n.kind not in (NodeKind.VAR, NodeKind.ENTRY):
            return False
        base = n.name.split(".", 1)[0]
        if base.startswith("ret$"):
            return False
        return "::" in base and not base.startswith(own)

    dead = {e for e in g.edges if foreign(e.src) or foreign(e.tgt)}
    return g.replace(dead, ()) if dead else g


def compose_call(
    prog: ir.Program,
    caller: ir.Proc,
    rpo: int,
    s: ir.Stmt,
    delta: SummaryGraph,
    targets: list[tuple[str, SummaryGraph]],
    levels: Mapping[str, Optional[int]],
    escaped: set[str],
    opts: BuildOpts,
    ctx: ComposeCtx,
) -> SummaryGraph:
    """Graph after a call, given the resolved callees and their summaries.

    Multiple targets (a function pointer with several possible values) are
    composed independently and merged, since any one of them may run.  A
    TOP summary (in-progress recursion) poisons its branch; it contributes
    nothing to the merge and the enclosing fixed point revisits us once
    the callee has a real summary.
    """
    outs = [
        _compose_one(
            prog, caller, rpo, s, delta, name, final,
            levels, escaped, opts, ctx,
        )
        for name, final in targets
    ]
    live = [o for o in outs if not o.is_top]
    if not live:
        return TOP
    out = live[0]
    for o in live[1:]:
        out = out.meet(o)
    return _scrub_foreign(out, caller)


# ----------------------------------------------------------------------------
# Function pointer contexts
# ----------------------------------------------------------------------------

# A context records, for the names whose function-pointer values the callee
# depends on, which functions they may hold: frozenset of (name, targets).
FpCtx = frozenset
Key = tuple[str, FpCtx]

EMPTY_FPCTX: FpCtx = frozenset()


def _key_sort(key: Key):
    name, fpctx = key
    return (name, sorted((v, tuple(sorted(ts))) for v, ts in fpctx))


def _fp_relevant(prog: ir.Program) -> dict[str, set[str]]:
    """Per procedure: the formals and globals whose incoming function
    pointer values its behavior can depend on.  These names key contexts;
    everything else is context-insensitive."""
    gset = set(prog.globals_)
    backcopy: dict[str, dict[str, set[str]]] = {}
    for proc in prog.funcs.values():
        bc: dict[str, set[str]] = {}
        for st in proc.cfg.stmts:
            if st.kind is ir.Kind.COPY:
                bc.setdefault(st.lhs, set()).add(st.rhs)
        backcopy[proc.name] = bc

    def entry_sources(proc: ir.Proc, v: str) -> set[str]:
        seen: set[str] = set()
        out: set[str] = set()
        work = [v]
        while work:
            n = work.pop()
            if n in seen:
                continue
            seen.add(n)
            if n in proc.params or n in gset:
                out.add(n)
            work.extend(backcopy[proc.name].get(n, ()))
        return out

    taken = {
        st.callee
        for proc in prog.funcs.values()
        for st in proc.cfg.stmts
        if st.kind is ir.Kind.FN_ADDR
    }
    rel: dict[str, set[str]] = {name: set() for name in prog.funcs}
    for proc in prog.funcs.values():
        for st in proc.cfg.stmts:
            if st.kind is ir.Kind.CALL and st.indirect:
                rel[proc.name] |= entry_sources(proc, st.callee)

    for _ in range(len(prog.funcs) + 1):
        changed = False
        for proc in prog.funcs.values():
            for st in proc.cfg.stmts:
                if st.kind is not ir.Kind.CALL:
                    continue
                callees = sorted(taken) if st.indirect else [st.callee]
                for cname in callees:
                    if cname not in prog.funcs:
                        continue
                    need = rel[cname]
                    grow: set[str] = set()
                    for formal, actual in zip(prog.funcs[cname].params, st.args):
                        if formal in need:
                            grow |= entry_sources(proc, actual)
                    grow |= {g for g in need if g in gset}
                    new = grow - rel[proc.name]
                    if new:
                        rel[proc.name] |= new
                        changed = True
        if not changed:
            break
    return rel


# ----------------------------------------------------------------------------
# The driver
# ----------------------------------------------------------------------------


@dataclass
class AnalysisResult:
    prog: ir.Program
    levels: dict[str, Optional[int]]
    opts: BuildOpts
    summaries: dict[Key, ProcSummaries]
    builds: dict[Key, int]
    escaped: set[str]
    universe: list[Node]

    def contexts(self, proc: str) -> list[Key]:
        return [k for k in sorted(self.summaries, key=_key_sort) if k[0] == proc]

    def merged(self, proc: str) -> ProcSummaries:
        """All contexts of a procedure folded into one per-point view."""
        keys = self.contexts(proc)
        if not keys:
            raise KeyError(proc)
        base = self.summaries[keys[0]]
        points = dict(base.points)
        final = base.final
        call_targets: dict[int, list] = {
            i: list(ts) for i, ts in base.call_targets.items()
        }
        for k in keys[1:]:
            other = self.summaries[k]
            for i, g in other.points.items():
                points[i] = points[i].meet(g) if i in points else g
            final = final.meet(other.final)
            for i, ts in other.call_targets.items():
                cur = call_targets.setdefault(i, [])
                for t in ts:
                    if t not in cur:
                        cur.append(t)
        return ProcSummaries(proc, points, final, call_targets)

    def final(self, proc: str) -> SummaryGraph:
        return self.merged(proc).final


class Analyzer:
    """Builds one summary per (procedure, function-pointer context).

    Lookups of a summary still being built answer with a seed: TOP by
    default (optimistic, refined by re-iteration), or the bare boundary
    graph in the identity-seeding mode used to study how seeding changes
    the recursive fixed point.
    """

    def __init__(
        self,
        prog: ir.Program,
        opts: Optional[BuildOpts] = None,
        recursion_seed: str = "top",
    ) -> None:
        if "main" not in prog.funcs:
            raise AnalysisError("program has no main")
        if recursion_seed not in ("top", "identity"):
            raise ValueError(recursion_seed)
        self.prog = prog
        self.opts = opts or BuildOpts()
        self.levels = ir.infer_levels(prog)
        self.escaped: set[str] = set()
        for p in prog.funcs.values():
            self.escaped |= p.escaped
        self.universe = location_universe(prog)
        self.relevant = _fp_relevant(prog)
        self.recursion_seed = recursion_seed
        self.summaries: dict[Key, ProcSummaries] = {}
        self.builds: dict[Key, int] = {}
        self._in_progress: set[Key] = set()
        self._used: dict[Key, dict[Key, SummaryGraph]] = {}

    def analyze(self) -> AnalysisResult:
        self._build(("main", EMPTY_FPCTX))
        for _ in range(16):
            stale = [k for k in self.summaries if self._stale(k)]
            if not stale:
                break
            for k in sorted(stale, key=_key_sort):
                self._build(k)
        else:
            raise AnalysisError("recursive summaries failed to stabilize")
        return AnalysisResult(
            self.prog,
            self.levels,
            self.opts,
            dict(self.summaries),
            dict(self.builds),
            set(self.escaped),
            list(self.universe),
        )

    # -- memo table ----------------------------------------------------------

    def _seed(self, key: Key) -> SummaryGraph:
        if self.recursion_seed == "identity":
            return boundary_gpg(self.prog, key[0], self.levels, self.opts)
        return TOP

    def _lookup(self, key: Key) -> SummaryGraph:
        if key in self.summaries:
            return self.summaries[key].final
        if key in self._in_progress:
            return self._seed(key)
        return self._build(key).final

    def _stale(self, key: Key) -> bool:
        for dep, seen in self._used.get(key, {}).items():
            cur = (
                self.summaries[dep].final
                if dep in self.summaries
                else self._seed(dep)
            )
            if cur != seen:
                return True
        return False

    def _build(self, key: Key) -> ProcSummaries:
        name, fpctx = key
        proc = self.prog.funcs[name]
        self._in_progress.add(key)
        self._used[key] = {}
        try:
            summ = build_intra(
                self.prog,
                proc,
                self.levels,
                self.escaped,
                self.opts,
                self._resolver(key, proc, fpctx),
                self.universe,
            )
        finally:
            self._in_progress.discard(key)
        self.summaries[key] = summ
        self.builds[key] = self.builds.get(key, 0) + 1
        return summ

    def _resolver(self, key: Key, proc: ir.Proc, fpctx: FpCtx):
        ctx = make_ctx(proc, self.levels)

        def resolve(rpo: int, s: ir.Stmt, delta: SummaryGraph):
            if s.indirect:
                names = sorted(
                    self._fp_values(fpctx, delta, s.callee, s.line)
                )
            else:
                names = [s.callee]
            targets: list[tuple[str, SummaryGraph]] = []
            keys: list[Key] = []
            for t in names:
                if t not in self.prog.funcs:
                    raise AnalysisError(f"line {s.line}: call to unknown {t!r}")
                dep: Key = (t, self._ctx_for(fpctx, delta, s, t))
                fin = self._lookup(dep)
                self._used[key][dep] = fin
                targets.append((t, fin))
                keys.append(dep)
            out = compose_call(
                self.prog, proc, rpo, s, delta, targets,
                self.levels, self.escaped, self.opts, ctx,
            )
            return out, keys

        return resolve

    # -- function pointer resolution ------------------------------------------

    def _fp_values(
        self,
        fpctx: FpCtx,
        delta: SummaryGraph,
        name: str,
        line: int,
    ) -> set[str]:
        """Functions a variable may point at, per the graph at this point.

        Direct function values are taken as-is; a variable still holding
        its entry value defers to the calling context.  Anything else in
        the chain defeats resolution.
        """
        ctx_map = {v: ts for v, ts in fpctx}
        out: set[str] = set()
        seen: set[str] = set()
        work = [name]
        while work:
            v = work.pop()
            if v in seen:
                continue
            seen.add(v)
            for e in delta.edges_from(var(v)):
                if e.is_aggregate or e.src_lev != lv(1):
                    continue
                tgt = e.tgt
                if tgt.kind is NodeKind.FUNC and e.tgt_lev == lv(0):
                    out.add(tgt.name)
                elif tgt.kind is NodeKind.ENTRY and e.tgt_lev == lv(1):
                    if tgt.name in ctx_map:
                        out |= set(ctx_map[tgt.name])
                    else:
                        raise AnalysisError(
                            f"line {line}: cannot resolve indirect call "
                            f"through {_display(name)}: no binding for "
                            f"{_display(tgt.name)}"
                        )
                elif tgt.kind is NodeKind.VAR and e.tgt_lev == lv(1):
                    work.append(tgt.name)
                elif tgt.kind is NodeKind.UNDEF:
                    continue
                else:
                    raise AnalysisError(
                        f"line {line}: indirect call through "
                        f"{_display(name)}: unresolvable target {e.render()}"
                    )
        if not out:
            raise AnalysisError(
                f"line {line}: indirect call through {_display(name)} "
                f"has no function targets"
            )
        return out

    def _ctx_for(
        self,
        fpctx: FpCtx,
        delta: SummaryGraph,
        s: ir.Stmt,
        callee_name: str,
    ) -> FpCtx:
        need = self.relevant.get(callee_name, set())
        if not need:
            return EMPTY_FPCTX
        callee = self.prog.funcs[callee_name]
        bound = dict(zip(callee.params, s.args))
        entries: list[tuple[str, frozenset]] = []
        for n in sorted(need):
            if n in bound:
                src_var = bound[n]
            elif "::" not in n:
                src_var = n
            else:
                continue
            try:
                vals = self._fp_values(fpctx, delta, src_var, s.line)
            except AnalysisError:
                # the callee only needs this binding if it actually reaches
                # the indirect site; let it fail there if so
                continue
            entries.append((n, frozenset(vals)))
        return frozenset(entries)


def analyze(
    prog: ir.Program,
    opts: Optional[BuildOpts] = None,
    recursion_seed: str = "top",
) -> AnalysisResult:
    return Analyzer(prog, opts, recursion_seed).analyze()
