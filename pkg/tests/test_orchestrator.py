from __future__ import annotations

import json
from pathlib import Path

import pytest

from cpl.core import load_library
from cpl.events import read_events, replay_library
from cpl.gateway import Gateway, QueueProvider
from cpl.orchestrator import (
    ResumeConsistencyError,
    RunConfig,
    run,
    run_cpl,
    run_simple_loop,
)
from cpl.verifier import CheckResult, ScriptedVerifier

SEED = "import Mathlib\n"

FIXTURES = Path(__file__).parent / "fixtures"
DEMO_CONFIG = FIXTURES / "cpl_demo" / "config.json"


class SimulatedCrash(Exception):
    pass


def write_seed(tmp_path) -> Path:
    seed_path = tmp_path / "seed.lean"
    seed_path.write_text(SEED, encoding="utf-8")
    return seed_path


def base_config(tmp_path, **overrides) -> RunConfig:
    config = RunConfig(
        mode="cpl",
        seed_path=str(write_seed(tmp_path)),
        output_dir=str(tmp_path / "out"),
        clock="fixed",
        verifier_backend="scripted",
    )
    for key, value in overrides.items():
        setattr(config, key, value)
    return config


def decl(name: str, n: int) -> str:
    return f"theorem {name} : {n} = {n} := sorry"


# ---------------------------------------------------------------------------
# CPL trace
# ---------------------------------------------------------------------------


def test_cpl_trace_three_loops(tmp_path):
    # loop 1 conjectures {c1, c2}; loop 2 {c3}; loop 3 {}; proofs succeed
    # for c1 and c3 only -> final library is [c1, c3].
    config = base_config(
        tmp_path, loops=3, conjecture_iterations=1, max_trials=2
    )
    provider = QueueProvider(
        {
            "conjecturer": [decl("c1", 1) + "\n\n" + decl("c2", 2), decl("c3", 3), ""],
            "prover": ["by p1", "by bad_a", "by bad_b", "by p3"],
        }
    )
    session = ScriptedVerifier(SEED)
    session.script("verify_proof", "1 = 1", CheckResult("verified"), "by p1")
    session.script("verify_proof", "3 = 3", CheckResult("verified"), "by p3")
    gateway = Gateway(provider, sleep=lambda s: None)
    library = run_cpl(config, gateway=gateway, session=session)

    assert [e.statement.name for e in library.entries] == ["c1", "c3"]
    assert [e.provenance for e in library.entries] == ["cpl", "cpl"]

    events = read_events(Path(config.output_dir) / "events.jsonl")
    assert sum(1 for e in events if e.kind == "loop_complete") == 3
    assert sum(1 for e in events if e.kind == "run_complete") == 1
    # an empty third loop still counted
    assert events[-1].payload["library_size"] == 2


def test_cpl_persists_library_and_report(tmp_path):
    config = base_config(tmp_path, loops=1, conjecture_iterations=1)
    provider = QueueProvider(
        {"conjecturer": [decl("only", 7)], "prover": ["by p"]}
    )
    session = ScriptedVerifier(SEED)
    session.script("verify_proof", "7 = 7", CheckResult("verified"), "by p")
    run_cpl(config, gateway=Gateway(provider, sleep=lambda s: None), session=session)

    out = Path(config.output_dir)
    loaded = load_library(out / "library.lean")
    assert [e.statement.name for e in loaded.entries] == ["only"]
    report = json.loads((out / "report.json").read_text(encoding="utf-8"))
    assert report["library_entries"] == 1
    assert report["mode"] == "cpl"


def test_event_log_reconstructs_library_exactly(tmp_path):
    config = base_config(tmp_path, loops=2, conjecture_iterations=1)
    provider = QueueProvider(
        {
            "conjecturer": [decl("a", 1), decl("b", 2)],
            "prover": ["by pa", "by pb"],
        }
    )
    session = ScriptedVerifier(SEED)
    session.script("verify_proof", "1 = 1", CheckResult("verified"), "by pa")
    session.script("verify_proof", "2 = 2", CheckResult("verified"), "by pb")
    library = run_cpl(
        config, gateway=Gateway(provider, sleep=lambda s: None), session=session
    )
    events = read_events(Path(config.output_dir) / "events.jsonl")
    assert replay_library(events, SEED) == library


def test_library_file_is_consistent_at_every_append(tmp_path):
    config = base_config(tmp_path, loops=2, conjecture_iterations=1)
    library_path = Path(config.output_dir) / "library.lean"
    seen_sizes = []

    def listener(event):
        if event.kind == "theorem_added":
            on_disk = load_library(library_path)
            seen_sizes.append(len(on_disk.entries))
            assert len(on_disk.entries) == event.payload["sequence_index"] + 1

    provider = QueueProvider(
        {
            "conjecturer": [decl("a", 1), decl("b", 2)],
            "prover": ["by pa", "by pb"],
        }
    )
    session = ScriptedVerifier(SEED)
    session.script("verify_proof", "1 = 1", CheckResult("verified"), "by pa")
    session.script("verify_proof", "2 = 2", CheckResult("verified"), "by pb")
    run_cpl(
        config,
        gateway=Gateway(provider, sleep=lambda s: None),
        session=session,
        listener=listener,
    )
    assert seen_sizes == [1, 2]


# ---------------------------------------------------------------------------
# Simple loop
# ---------------------------------------------------------------------------


def full_decl(name: str, n: int, proof: str) -> str:
    return f"theorem {name} : {n} = {n} := {proof}"


def test_simple_loop_trace(tmp_path):
    # iterations 1 and 3 succeed; iteration 2 exhausts all 16 trials.
    config = base_config(tmp_path, mode="simple_loop", loops=3, max_trials=16)
    responses = [full_decl("s1", 1, "by rfl")]
    responses += [full_decl("s2", 2, f"by bad{i}") for i in range(16)]
    responses += [full_decl("s3", 3, "by rfl")]
    provider = QueueProvider({"simple_loop": responses})
    session = ScriptedVerifier(SEED)
    session.script("verify_proof", "1 = 1", CheckResult("verified"), "by rfl")
    session.script("verify_proof", "3 = 3", CheckResult("verified"), "by rfl")
    library = run_simple_loop(
        config, gateway=Gateway(provider, sleep=lambda s: None), session=session
    )
    assert [e.statement.name for e in library.entries] == ["s1", "s3"]
    assert all(e.provenance == "simple_loop" for e in library.entries)

    events = read_events(Path(config.output_dir) / "events.jsonl")
    second_loop_attempts = [
        e
        for e in events
        if e.kind == "proof_attempt" and e.payload.get("loop") == 2
    ]
    assert len(second_loop_attempts) == 16


def test_simple_loop_rejects_sorry_declaration(tmp_path):
    config = base_config(tmp_path, mode="simple_loop", loops=1, max_trials=2)
    provider = QueueProvider(
        {
            "simple_loop": [
                full_decl("cheat", 1, "by sorry"),
                full_decl("honest", 1, "by rfl"),
            ]
        }
    )
    session = ScriptedVerifier(SEED)
    session.script("verify_proof", "1 = 1", CheckResult("verified"), "by rfl")
    library = run_simple_loop(
        config, gateway=Gateway(provider, sleep=lambda s: None), session=session
    )
    assert [e.statement.name for e in library.entries] == ["honest"]
    events = read_events(Path(config.output_dir) / "events.jsonl")
    attempts = [e for e in events if e.kind == "proof_attempt"]
    assert len(attempts) == 2
    assert attempts[0].payload["verdict"] == "failed"
    assert "sorry" in attempts[0].payload["diagnostics"][0]


def test_simple_loop_feedback_reaches_next_trial(tmp_path):
    config = base_config(tmp_path, mode="simple_loop", loops=1, max_trials=2)
    transcript = Path(config.output_dir) / "transcript.jsonl"
    Path(config.output_dir).mkdir(parents=True, exist_ok=True)
    provider = QueueProvider(
        {
            "simple_loop": [
                full_decl("try1", 1, "by nope"),
                full_decl("try2", 1, "by rfl"),
            ]
        }
    )
    from cpl.verifier import Diagnostic

    session = ScriptedVerifier(SEED)
    session.script(
        "verify_proof",
        "1 = 1",
        CheckResult(
            "failed", diagnostics=(Diagnostic("error", 1, 30, "nope is not a tactic"),)
        ),
        "by nope",
    )
    session.script("verify_proof", "1 = 1", CheckResult("verified"), "by rfl")
    gateway = Gateway(provider, sleep=lambda s: None, transcript_path=transcript)
    run_simple_loop(config, gateway=gateway, session=session)
    entries = [json.loads(line) for line in transcript.read_text().splitlines()]
    assert "previous attempt:" in entries[1]["request"]["user_content"]
    assert "nope is not a tactic" in entries[1]["request"]["user_content"]


# ---------------------------------------------------------------------------
# Resume and crash consistency (bundled replay fixtures)
# ---------------------------------------------------------------------------


def demo_config(out_dir: Path) -> RunConfig:
    config = RunConfig.from_file(DEMO_CONFIG)
    config.output_dir = str(out_dir)
    return config


def run_demo_uninterrupted(out_dir: Path):
    return run(demo_config(out_dir))


def test_resume_after_interrupt_matches_uninterrupted(tmp_path):
    reference = run_demo_uninterrupted(tmp_path / "ref")
    reference_bytes = (tmp_path / "ref" / "library.lean").read_bytes()

    crash_dir = tmp_path / "crash"
    state = {"loops": 0}

    def listener(event):
        if event.kind == "loop_complete":
            state["loops"] += 1
            if state["loops"] == 2:
                raise SimulatedCrash("interrupted after loop 2 of 3")

    with pytest.raises(SimulatedCrash):
        run(demo_config(crash_dir), listener=listener)

    config = demo_config(crash_dir)
    config.resume = True
    resumed = run(config)
    assert (crash_dir / "library.lean").read_bytes() == reference_bytes
    assert [e.statement.name for e in resumed.entries] == [
        e.statement.name for e in reference.entries
    ]


def test_resume_mid_loop_rolls_back_uncommitted_entries(tmp_path):
    reference_bytes = None
    ref_dir = tmp_path / "ref"
    run_demo_uninterrupted(ref_dir)
    reference_bytes = (ref_dir / "library.lean").read_bytes()

    crash_dir = tmp_path / "crash"
    counter = {"added": 0}

    def listener(event):
        if event.kind == "theorem_added":
            counter["added"] += 1
            if counter["added"] == 2:  # mid-loop 1 (two appends in loop 1)
                raise SimulatedCrash("killed right after an append")

    with pytest.raises(SimulatedCrash):
        run(demo_config(crash_dir), listener=listener)

    config = demo_config(crash_dir)
    config.resume = True
    run(config)
    assert (crash_dir / "library.lean").read_bytes() == reference_bytes
    events = read_events(crash_dir / "events.jsonl")
    resumed_notes = [
        e for e in events if e.kind == "warning" and "resumed" in e.payload["message"]
    ]
    assert len(resumed_notes) == 1


def test_resume_with_tampered_library_names_entry(tmp_path):
    crash_dir = tmp_path / "crash"
    state = {"loops": 0}

    def listener(event):
        if event.kind == "loop_complete":
            state["loops"] += 1
            if state["loops"] == 2:
                raise SimulatedCrash()

    with pytest.raises(SimulatedCrash):
        run(demo_config(crash_dir), listener=listener)

    library_path = crash_dir / "library.lean"
    text = library_path.read_text(encoding="utf-8")
    library_path.write_text(
        text.replace("Set.empty_subset _", "Set.univ_subset _"), encoding="utf-8"
    )
    config = demo_config(crash_dir)
    config.resume = True
    with pytest.raises(ResumeConsistencyError) as excinfo:
        run(config)
    assert "alphaOpen_empty" in str(excinfo.value)


def test_resume_of_complete_run_is_noop(tmp_path):
    out = tmp_path / "full"
    first = run_demo_uninterrupted(out)
    events_before = (out / "events.jsonl").read_bytes()
    config = demo_config(out)
    config.resume = True
    again = run(config)
    assert [e.statement.name for e in again.entries] == [
        e.statement.name for e in first.entries
    ]
    assert (out / "events.jsonl").read_bytes() == events_before


def test_resume_without_logs_refuses(tmp_path):
    config = demo_config(tmp_path / "empty")
    config.resume = True
    with pytest.raises(ResumeConsistencyError):
        run(config)


def test_prover_calls_match_transcript_and_attempts(tmp_path):
    out = tmp_path / "run"
    run(demo_config(out))
    events = read_events(out / "events.jsonl")
    attempt_events = [e for e in events if e.kind == "proof_attempt"]
    transcript_lines = [
        json.loads(line)
        for line in (out / "transcript.jsonl").read_text().splitlines()
    ]
    prover_calls = [t for t in transcript_lines if t["role_id"] == "prover"]
    assert len(prover_calls) == len(attempt_events)
    # Every library entry corresponds to a verified attempt earlier in the log.
    verified_names = {
        e.payload.get("conjecture")
        for e in attempt_events
        if e.payload.get("verdict") == "verified"
    }
    for event in events:
        if event.kind == "theorem_added":
            assert event.payload["name"] in verified_names


# ---------------------------------------------------------------------------
# Config handling
# ---------------------------------------------------------------------------


def test_config_defaults_match_protocol_constants():
    assert RunConfig(mode="cpl").resolved_loops() == 30
    assert RunConfig(mode="simple_loop").resolved_loops() == 400
    config = RunConfig()
    assert config.conjecture_iterations == 16
    assert config.max_trials == 16


def test_config_from_file_resolves_relative_paths(tmp_path):
    (tmp_path / "seed.lean").write_text(SEED, encoding="utf-8")
    config_path = tmp_path / "config.json"
    config_path.write_text(
        json.dumps({"mode": "cpl", "seed_path": "seed.lean", "loops": 2}),
        encoding="utf-8",
    )
    config = RunConfig.from_file(config_path)
    assert Path(config.seed_path).is_absolute()
    assert Path(config.seed_path).read_text(encoding="utf-8") == SEED
    assert config.loops == 2


def test_config_from_file_rejects_unknown_keys(tmp_path):
    config_path = tmp_path / "config.json"
    config_path.write_text(json.dumps({"mode": "cpl", "loopz": 3}), encoding="utf-8")
    with pytest.raises(ValueError):
        RunConfig.from_file(config_path)


def test_replay_defaults_to_fixed_clock():
    assert RunConfig(replay_dir="x").resolved_clock() == "fixed"
    assert RunConfig().resolved_clock() == "system"
