#!/usr/bin/env python3
"""Walk through a complete deterministic pipeline run, offline.

The bundled fixtures replay three loops of recorded model responses
against a scripted verifier: conjectures get parsed, deduplicated,
validity- and novelty-checked; survivors go to the prover; verified
pairs land in the library. Run it twice and the outputs are identical
byte for byte.

Usage: python demos/replay_pipeline.py [output_dir]
"""

from __future__ import annotations

import sys
import tempfile
from pathlib import Path

from cpl.evalharness import proof_length_histogram, summarize_events
from cpl.core import load_library
from cpl.orchestrator import RunConfig, run

REPO = Path(__file__).resolve().parent.parent
DEMO_CONFIG = REPO / "tests" / "fixtures" / "cpl_demo" / "config.json"


def main() -> None:
    out_dir = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(
        tempfile.mkdtemp(prefix="cpl_demo_")
    )
    config = RunConfig.from_file(DEMO_CONFIG)
    config.output_dir = str(out_dir)

    print(f"replaying {config.loops} loops from recorded responses...")
    library = run(config)

    print(f"\nrun artifacts in {out_dir}:")
    for name in ("library.lean", "events.jsonl", "transcript.jsonl", "report.json"):
        print(f"  {name}: {(out_dir / name).stat().st_size} bytes")

    print(f"\nthe library holds {len(library.entries)} verified theorems:")
    for entry in library.entries:
        print(f"  [{entry.sequence_index}] {entry.statement.name}")

    summary = summarize_events(out_dir / "events.jsonl")
    print("\nwhat the event log recorded:")
    print(f"  conjectures accepted:  {summary['conjectures_accepted']}")
    print(f"  conjectures rejected:  {summary['conjectures_rejected']}")
    print(f"  prover attempts:       {summary['proof_attempts']}")
    print(f"  theorems added:        {summary['theorems_added']}")

    print("\nproof length histogram (non-comment lines, bins of 10):")
    reloaded = load_library(out_dir / "library.lean")
    for start, count in proof_length_histogram(reloaded, bin_width=10):
        print(f"  [{start:3d}, {start + 10:3d}): {'#' * count} ({count})")

    print("\nrun me again with the same output dir removed: the bytes match.")


if __name__ == "__main__":
    main()
