"""Pointer analysis with bounded, composable procedure summaries.

Per-procedure effects are recorded as small graphs over access paths,
built flow-sensitively, specialized per function-pointer context, and
spliced into callers; a client phase then turns them into classical
per-point points-to facts, and a path-enumerating oracle can check those
facts against concrete execution.
"""

from .build import (
    AnalysisError,
    BuildOpts,
    ProcSummaries,
    boundary_gpg,
    boundary_names,
    build_intra,
    gpg_update,
    must_pointer_edge,
    stmt_edges,
)
from .calls import AnalysisResult, Analyzer, analyze, compose_call, must_defined
from .client import (
    FieldCell,
    PointsToResult,
    apply_summary,
    classical,
    values_of,
)
from .compose import (
    ALWAYS_CTX,
    ComposeCtx,
    Desirable,
    FuelExhausted,
    Inconclusive,
    Irrelevant,
    NoComposition,
    NotUseful,
    PivotRole,
    compose,
    conclusive,
    reduce_edge,
)
from .graph import (
    AccessPath,
    AllExcept,
    Edge,
    Exact,
    Node,
    NodeKind,
    SummaryGraph,
    TOP,
    lv,
)
from .ir import IrError, Program, infer_levels, parse, parse_file
from .oracle import (
    SoundnessReport,
    check_soundness,
    concrete_apply,
    concrete_delta,
)

__all__ = [
    "ALWAYS_CTX",
    "AccessPath",
    "AllExcept",
    "AnalysisError",
    "AnalysisResult",
    "Analyzer",
    "BuildOpts",
    "ComposeCtx",
    "Desirable",
    "Edge",
    "Exact",
    "FieldCell",
    "FuelExhausted",
    "Inconclusive",
    "IrError",
    "Irrelevant",
    "NoComposition",
    "Node",
    "NodeKind",
    "NotUseful",
    "PivotRole",
    "PointsToResult",
    "ProcSummaries",
    "Program",
    "SoundnessReport",
    "SummaryGraph",
    "TOP",
    "analyze",
    "apply_summary",
    "boundary_gpg",
    "boundary_names",
    "build_intra",
    "check_soundness",
    "classical",
    "compose",
    "compose_call",
    "conclusive",
    "concrete_apply",
    "concrete_delta",
    "gpg_update",
    "infer_levels",
    "lv",
    "must_defined",
    "must_pointer_edge",
    "parse",
    "parse_file",
    "stmt_edges",
    "values_of",
]
