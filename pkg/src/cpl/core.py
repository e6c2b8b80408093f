"""Domain types and pure text operations shared by the whole pipeline.

Everything here is immutable and side-effect free: theorem statements,
proof scripts, the verified-theorem library, plus the Lean-aware text
utilities (declaration parsing, normalization, context rendering, the
proof-length metric, and the on-disk library format).
"""

from __future__ import annotations

import os
import re
import tempfile
from dataclasses import dataclass, replace
from pathlib import Path

PROVENANCES = ("cpl", "simple_loop", "fixture")

LENGTH_METRICS = ("lines", "chars")

ENTRY_MARKER = re.compile(
    r"^-- \[cpl:entry (\d+) ([a-z_]+) (\S+)\]$", re.MULTILINE
)

_FENCE_LINE = re.compile(r"^[ \t]*(`{3,})([^`\n]*)$")
_THEOREM_START = re.compile(r"^[ \t]*(theorem)\b", re.MULTILINE)
_NAME_AFTER_KEYWORD = re.compile(r"theorem\s+([^\s(\[{⦃:]+)")
_SORRY_TERMINATOR = re.compile(r":=\s*sorry(?![A-Za-z0-9_'!?])")
_SORRY_TOKEN = re.compile(r"(?<![A-Za-z0-9_'!?])sorry(?![A-Za-z0-9_'!?])")

_OPEN_BRACKETS = "([{⟨⦃"
_CLOSE_BRACKETS = ")]}⟩⦄"


@dataclass(frozen=True)
class ParseWarning:
    """A non-fatal problem found while extracting declarations."""

    kind: str  # "skipped_declaration" | "unterminated_fence"
    detail: str

    def __str__(self) -> str:
        return f"{self.kind}: {self.detail}"


def mask_comments(text: str, mask_strings: bool = False) -> str:
    """Blank out Lean comments (and optionally string contents) with spaces.

    Line structure is preserved so the result can be inspected line by
    line. Handles `--` line comments, nested `/- ... -/` block comments
    (doc comments included), and double-quoted strings with escapes.
    """
    out = list(text)
    i = 0
    n = len(text)
    block_depth = 0
    in_line = False
    in_string = False
    while i < n:
        c = text[i]
        nxt = text[i + 1] if i + 1 < n else ""
        if in_line:
            if c == "\n":
                in_line = False
            else:
                out[i] = " "
            i += 1
        elif block_depth > 0:
            if c == "/" and nxt == "-":
                block_depth += 1
                out[i] = out[i + 1] = " "
                i += 2
            elif c == "-" and nxt == "/":
                block_depth -= 1
                out[i] = out[i + 1] = " "
                i += 2
            else:
                if c != "\n":
                    out[i] = " "
                i += 1
        elif in_string:
            if c == "\\" and nxt:
                if mask_strings:
                    out[i] = " "
                    if nxt != "\n":
                        out[i + 1] = " "
                i += 2
            elif c == '"':
                in_string = False
                i += 1
            else:
                if mask_strings and c != "\n":
                    out[i] = " "
                i += 1
        else:
            if c == "-" and nxt == "-":
                in_line = True
                out[i] = out[i + 1] = " "
                i += 2
            elif c == "/" and nxt == "-":
                block_depth = 1
                out[i] = out[i + 1] = " "
                i += 2
            elif c == '"':
                in_string = True
                i += 1
            else:
                i += 1
    return "".join(out)


def contains_sorry(text: str) -> bool:
    """True if the `sorry` token appears outside comments and strings."""
    return bool(_SORRY_TOKEN.search(mask_comments(text, mask_strings=True)))


@dataclass(frozen=True)
class TheoremStatement:
    """A parsed `theorem` declaration with its proof elided as `sorry`.

    `body` is the text between the theorem name and `:=` (binders
    included; the lone head colon is dropped when there are no binders),
    `source_text` is the full declaration ending in `:= sorry`.
    """

    name: str
    body: str
    source_text: str

    def __post_init__(self) -> None:
        if not self.name:
            raise ValueError("theorem name must be nonempty")
        if not self.body.strip():
            raise ValueError(f"theorem {self.name!r} has an empty body")
        src = self.source_text.strip()
        if not src.startswith("theorem"):
            raise ValueError(f"source of {self.name!r} must start with 'theorem'")
        if not src.endswith(":= sorry"):
            raise ValueError(f"source of {self.name!r} must end with ':= sorry'")

    @classmethod
    def from_source(cls, source: str) -> "TheoremStatement":
        """Parse a single well-formed declaration; raises if none is found."""
        parsed = parse_theorem_declarations(source)
        if len(parsed) != 1:
            raise ValueError(
                f"expected exactly one declaration, found {len(parsed)}"
            )
        return parsed[0]

    def with_name(self, new_name: str) -> "TheoremStatement":
        """Return a copy renamed to `new_name` (source text rewritten)."""
        pattern = re.compile(r"^(theorem\s+)" + re.escape(self.name))
        new_source, count = pattern.subn(
            lambda m: m.group(1) + new_name, self.source_text.strip(), count=1
        )
        if count != 1:
            raise ValueError(f"could not rewrite name in {self.name!r}")
        return TheoremStatement(name=new_name, body=self.body, source_text=new_source)

    def render_with_proof(self, proof: "ProofScript") -> str:
        """The declaration with `sorry` replaced by the proof script."""
        src = self.source_text.strip()
        return src[: -len("sorry")] + proof.text

    def render_for_exact_check(self) -> str:
        """The declaration with `sorry` replaced by `by exact?`."""
        src = self.source_text.strip()
        return src[: -len("sorry")] + "by exact?"


@dataclass(frozen=True)
class ProofScript:
    """The code that directly follows `:=` (a `by` block or a term)."""

    text: str

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise ValueError("proof script must be nonempty")
        if contains_sorry(self.text):
            raise ValueError("proof script contains the 'sorry' token")


@dataclass(frozen=True)
class LibraryEntry:
    statement: TheoremStatement
    proof: ProofScript
    sequence_index: int
    provenance: str
    created_at: str

    def __post_init__(self) -> None:
        if self.sequence_index < 0:
            raise ValueError("sequence_index must be nonnegative")
        if self.provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {self.provenance!r}")

    def render_source(self) -> str:
        return self.statement.render_with_proof(self.proof)


@dataclass(frozen=True)
class Library:
    """Append-only collection of verified (statement, proof) pairs."""

    seed_source: str
    entries: tuple[LibraryEntry, ...] = ()

    def __post_init__(self) -> None:
        for i, entry in enumerate(self.entries):
            if entry.sequence_index != i:
                raise ValueError(
                    f"entry {entry.statement.name!r} has sequence_index "
                    f"{entry.sequence_index}, expected {i}"
                )

    def __len__(self) -> int:
        return len(self.entries)

    def entry_names(self) -> set[str]:
        return {e.statement.name for e in self.entries}

    def append(
        self,
        statement: TheoremStatement,
        proof: ProofScript,
        provenance: str,
        created_at: str,
    ) -> "Library":
        """Return a new Library with one more entry.

        A statement whose name collides with an existing entry is
        renamed `<name>_<sequence_index>` so every entry stays usable
        as a lemma in later contexts.
        """
        index = len(self.entries)
        if statement.name in self.entry_names():
            statement = statement.with_name(f"{statement.name}_{index}")
        entry = LibraryEntry(
            statement=statement,
            proof=proof,
            sequence_index=index,
            provenance=provenance,
            created_at=created_at,
        )
        return replace(self, entries=self.entries + (entry,))

    def prefix(self, count: int) -> "Library":
        """The library restricted to its first `count` entries."""
        return replace(self, entries=self.entries[:count])


class ConjectureList:
    """Ordered accumulator of accepted conjectures, unique modulo whitespace."""

    def __init__(self, items: list[TheoremStatement] | None = None):
        self.items: list[TheoremStatement] = []
        self._keys: set[str] = set()
        for item in items or []:
            self.add(item)

    def __len__(self) -> int:
        return len(self.items)

    def __iter__(self):
        return iter(self.items)

    def contains(self, stmt: TheoremStatement) -> bool:
        return normalize_statement(stmt) in self._keys

    def add(self, stmt: TheoremStatement) -> None:
        key = normalize_statement(stmt)
        if key in self._keys:
            raise ValueError(f"duplicate conjecture body: {key!r}")
        self._keys.add(key)
        self.items.append(stmt)


def normalize_statement(stmt: TheoremStatement) -> str:
    """Canonical dedup key: the body with whitespace runs collapsed.

    Purely textual; alpha-equivalent statements with different variable
    names stay distinct (the `exact?` novelty check covers those).
    """
    return " ".join(stmt.body.split())


def strip_code_fences(
    text: str, warnings: list[ParseWarning] | None = None
) -> str:
    """Remove Markdown code-fence delimiter lines, keeping everything else.

    An unterminated opening fence is removed anyway and reported via
    `warnings`.
    """
    lines = text.split("\n")
    kept: list[str] = []
    open_fence: str | None = None
    for line in lines:
        m = _FENCE_LINE.match(line)
        if m:
            if open_fence is None:
                open_fence = m.group(1)
            else:
                open_fence = None
            continue
        kept.append(line)
    if open_fence is not None and warnings is not None:
        warnings.append(
            ParseWarning("unterminated_fence", "opening code fence never closed")
        )
    return "\n".join(kept)


def parse_theorem_declarations(
    text: str, warnings: list[ParseWarning] | None = None
) -> list[TheoremStatement]:
    """Extract every `theorem ... := sorry` declaration from model output.

    Leniency rules: code fences are stripped first, prose outside
    declarations is ignored, and a declaration that does not end in
    `:= sorry` (or has no name/body) is skipped with a warning instead
    of failing the whole response. Returns an empty list when nothing
    parses.
    """
    if warnings is None:
        warnings = []
    cleaned = strip_code_fences(text, warnings)
    starts = [m.start(1) for m in _THEOREM_START.finditer(cleaned)]
    found: list[TheoremStatement] = []
    for idx, start in enumerate(starts):
        end = starts[idx + 1] if idx + 1 < len(starts) else len(cleaned)
        region = cleaned[start:end]
        terminator = _SORRY_TERMINATOR.search(region)
        if terminator is None:
            warnings.append(
                ParseWarning(
                    "skipped_declaration",
                    f"no ':= sorry' terminator: {_snippet(region)}",
                )
            )
            continue
        head = region[: terminator.start()]
        name_match = _NAME_AFTER_KEYWORD.match(head)
        if name_match is None:
            warnings.append(
                ParseWarning(
                    "skipped_declaration", f"unnamed declaration: {_snippet(region)}"
                )
            )
            continue
        name = name_match.group(1)
        body = head[name_match.end() :].strip()
        if body.startswith(":"):
            body = body[1:].strip()
        if not body:
            warnings.append(
                ParseWarning(
                    "skipped_declaration", f"empty body: {_snippet(region)}"
                )
            )
            continue
        # Terminator spelled canonically so source_text always ends ":= sorry".
        source_text = head.rstrip() + " := sorry"
        found.append(TheoremStatement(name=name, body=body, source_text=source_text))
    return found


def _snippet(text: str, limit: int = 60) -> str:
    flat = " ".join(text.split())
    return flat[:limit] + ("..." if len(flat) > limit else "")


def proof_length(proof: ProofScript, metric: str = "lines") -> int:
    """Size of a proof script.

    The default `lines` metric counts lines that are neither blank nor
    comment-only; the `chars` alternative is the raw character count.
    Output labels must always say which metric was used.
    """
    if metric not in LENGTH_METRICS:
        raise ValueError(f"unknown proof-length metric {metric!r}")
    if metric == "chars":
        return len(proof.text)
    masked = mask_comments(proof.text)
    return sum(1 for line in masked.split("\n") if line.strip())


def render_context(
    library: Library,
    extras: list[TheoremStatement],
    budget: int,
    warnings: list[str] | None = None,
) -> str:
    """Render the prompt/verifier context: seed, then entries, then extras.

    Entries carry their full proofs; extras keep their `sorry` bodies.
    When the total exceeds `budget`, the oldest entries are dropped
    first (the seed and the extras are never dropped). A budget too
    small for even seed + extras is an error.
    """
    if budget <= 0:
        raise ValueError("context budget must be positive")
    seed = library.seed_source
    extra_blocks = [stmt.source_text.strip() for stmt in extras]
    entry_blocks = [entry.render_source() for entry in library.entries]

    def assemble(blocks: list[str]) -> str:
        if not blocks:
            return seed
        sep = "\n" if seed.endswith("\n") else "\n\n"
        return seed + sep + "\n\n".join(blocks)

    dropped = 0
    while True:
        rendered = assemble(entry_blocks[dropped:] + extra_blocks)
        if len(rendered) <= budget:
            break
        if dropped == len(entry_blocks):
            raise ValueError(
                f"context budget {budget} cannot fit seed plus "
                f"{len(extra_blocks)} extra statement(s) "
                f"({len(rendered)} chars)"
            )
        dropped += 1
    if dropped and warnings is not None:
        warnings.append(
            f"context truncated: dropped {dropped} oldest entr"
            f"{'y' if dropped == 1 else 'ies'} to fit budget {budget}"
        )
    return rendered


def split_declaration(decl_text: str) -> tuple[str, str]:
    """Split `theorem <head> := <proof>` at the first top-level `:=`.

    Bracket-, comment- and string-aware so `:=` inside binder defaults
    or nested terms does not confuse the split. Returns (head, proof).
    """
    masked = mask_comments(decl_text, mask_strings=True)
    depth = 0
    i = 0
    n = len(masked)
    while i < n - 1:
        c = masked[i]
        if c in _OPEN_BRACKETS:
            depth += 1
        elif c in _CLOSE_BRACKETS:
            depth = max(0, depth - 1)
        elif depth == 0 and c == ":" and masked[i + 1] == "=":
            head = decl_text[:i]
            proof = decl_text[i + 2 :]
            if not head.strip() or not proof.strip():
                raise ValueError("declaration has an empty head or proof")
            return head, proof
        i += 1
    raise ValueError("no top-level ':=' found in declaration")


def parse_theorem_with_proof(
    text: str,
) -> tuple[TheoremStatement, ProofScript]:
    """Parse one full `theorem ... := <proof>` declaration (fences allowed)."""
    cleaned = strip_code_fences(text).strip()
    start = _THEOREM_START.search(cleaned)
    if start is None:
        raise ValueError("no theorem declaration found")
    decl = cleaned[start.start(1) :].strip()
    head, proof_text = split_declaration(decl)
    name_match = _NAME_AFTER_KEYWORD.match(head)
    if name_match is None:
        raise ValueError("declaration has no name")
    name = name_match.group(1)
    body = head[name_match.end() :].strip()
    if body.startswith(":"):
        body = body[1:].strip()
    statement = TheoremStatement(
        name=name, body=body, source_text=head.rstrip() + " := sorry"
    )
    return statement, ProofScript(text=proof_text.strip())


# ---------------------------------------------------------------------------
# On-disk library format: a single Lean file that elaborates unchanged.
# ---------------------------------------------------------------------------


def dump_library(library: Library) -> str:
    """Serialize to the Lean library file format.

    Seed first, then each entry as a marker comment plus the full
    declaration, blocks separated by one blank line.
    """
    seed = library.seed_source.rstrip("\n")
    blocks = [seed]
    for entry in library.entries:
        marker = (
            f"-- [cpl:entry {entry.sequence_index} {entry.provenance} "
            f"{entry.created_at}]"
        )
        blocks.append(f"{marker}\n{entry.render_source()}")
    return "\n\n".join(blocks) + "\n"


def save_library(library: Library, path: str | Path) -> None:
    """Atomically write the library file (temp file + rename)."""
    path = Path(path)
    data = dump_library(library)
    fd, tmp_name = tempfile.mkstemp(
        dir=path.parent, prefix=path.name, suffix=".tmp"
    )
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as handle:
            handle.write(data)
            handle.flush()
            os.fsync(handle.fileno())
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise


def load_library(text_or_path: str | Path, from_path: bool = True) -> Library:
    """Parse a library file back into a Library value."""
    if from_path:
        text = Path(text_or_path).read_text(encoding="utf-8")
    else:
        text = str(text_or_path)
    markers = list(ENTRY_MARKER.finditer(text))
    if not markers:
        return Library(seed_source=text)
    seed = text[: markers[0].start()].rstrip("\n") + "\n"
    entries: list[LibraryEntry] = []
    for idx, marker in enumerate(markers):
        block_end = markers[idx + 1].start() if idx + 1 < len(markers) else len(text)
        decl_text = text[marker.end() : block_end].strip("\n")
        head, proof_text = split_declaration(decl_text)
        name_match = _NAME_AFTER_KEYWORD.match(head.strip())
        if name_match is None:
            raise ValueError(
                f"library entry {marker.group(1)} has no parsable name"
            )
        name = name_match.group(1)
        body = head.strip()[name_match.end() :].strip()
        if body.startswith(":"):
            body = body[1:].strip()
        statement = TheoremStatement(
            name=name, body=body, source_text=head.strip() + " := sorry"
        )
        entries.append(
            LibraryEntry(
                statement=statement,
                proof=ProofScript(text=proof_text.strip()),
                sequence_index=int(marker.group(1)),
                provenance=marker.group(2),
                created_at=marker.group(3),
            )
        )
    return Library(seed_source=seed, entries=tuple(entries))
