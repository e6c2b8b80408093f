"""Conjecturing and proving Lean 4 theorems with LLM agents.

A conjecturer model proposes `theorem ... := sorry` statements, a Lean
verifier session checks that they are well-formed and not already
derivable (via `exact?`), a prover model attempts proofs under verifier
error feedback, and every verified pair lands in an append-only library
that is fed back as context for the next round.
"""

from .core import (
    ConjectureList,
    Library,
    LibraryEntry,
    ProofScript,
    TheoremStatement,
    dump_library,
    load_library,
    normalize_statement,
    parse_theorem_declarations,
    proof_length,
    render_context,
    save_library,
    strip_code_fences,
)
from .conjecture import ConjecturePhaseReport, run_conjecture_phase
from .evalharness import (
    NLGrade,
    ReproveReport,
    emit_reports,
    grade_response,
    nl_report,
    nl_session,
    proof_length_histogram,
    reprove_all,
    reprove_focused,
)
from .gateway import ChatRequest, ChatResponse, Gateway
from .orchestrator import RunConfig, run, run_cpl, run_simple_loop
from .prover import ProofOutcome, prove
from .verifier import CheckResult, Diagnostic, open_session

__version__ = "0.1.0"

__all__ = [
    "ChatRequest",
    "ChatResponse",
    "CheckResult",
    "ConjectureList",
    "ConjecturePhaseReport",
    "Diagnostic",
    "Gateway",
    "Library",
    "LibraryEntry",
    "NLGrade",
    "ProofOutcome",
    "ProofScript",
    "ReproveReport",
    "RunConfig",
    "TheoremStatement",
    "dump_library",
    "emit_reports",
    "grade_response",
    "load_library",
    "nl_report",
    "nl_session",
    "normalize_statement",
    "open_session",
    "parse_theorem_declarations",
    "proof_length",
    "proof_length_histogram",
    "prove",
    "render_context",
    "reprove_all",
    "reprove_focused",
    "run",
    "run_conjecture_phase",
    "run_cpl",
    "run_simple_loop",
    "save_library",
    "strip_code_fences",
]
