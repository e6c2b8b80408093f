"""The prover loop: bounded retries with verifier error feedback.

One trial per gateway call. A verified proof ends the loop as success,
an empty response means the model declared the statement unprovable
(or false, under the alternate prompt), and exhausting the trial
budget ends it as failure. From the second trial on, the previous
proof and its diagnostics are embedded in the prompt.
"""

from __future__ import annotations

from dataclasses import dataclass

from .core import Library, ProofScript, TheoremStatement, render_context, strip_code_fences
from .gateway import ChatRequest, Gateway, TransportError
from .prompts import PROVER_PROMPT_VARIANTS
from .verifier import FAILED, VERIFIED, CheckResult, Diagnostic, VerifierError

DEFAULT_MAX_TRIALS = 16

STATUS_VERIFIED = "verified"
STATUS_FAILED = "failed_exhausted"
STATUS_UNPROVABLE = "declared_unprovable"


@dataclass(frozen=True)
class ProofAttempt:
    proof_text: str
    result: CheckResult | None  # None exactly for the empty surrender response


@dataclass(frozen=True)
class ProofOutcome:
    status: str
    attempts: tuple[ProofAttempt, ...]
    final_proof: ProofScript | None = None

    def __post_init__(self) -> None:
        if self.status == STATUS_VERIFIED and self.final_proof is None:
            raise ValueError("verified outcome requires a final proof")


def format_feedback(
    context: str, previous_proof: str, diagnostics: tuple[Diagnostic, ...]
) -> str:
    """User content for retry trials: context, prior proof, its errors."""
    lines = [context, "", "previous attempt:", previous_proof, "", "errors:"]
    lines.extend(d.format() for d in diagnostics)
    return "\n".join(lines)


def _synthetic_failure(message: str) -> CheckResult:
    return CheckResult(
        verdict=FAILED, diagnostics=(Diagnostic("error", 1, 0, message),)
    )


def verify_with_retry(session, context, stmt, proof) -> CheckResult:
    """verify_proof with one retry on transport failure.

    A second failure is converted into a failed-trial result rather
    than an exception, so a crashing backend costs one trial, not the
    run.
    """
    for remaining in (1, 0):
        try:
            return session.verify_proof(context, stmt, proof)
        except VerifierError as exc:
            if remaining:
                continue
            return _synthetic_failure(f"verifier transport error: {exc}")
    raise AssertionError("unreachable")


def prove(
    conjecture: TheoremStatement,
    library: Library,
    session,
    gateway: Gateway,
    max_trials: int = DEFAULT_MAX_TRIALS,
    prompt_variant: str = "not_provable",
    context_budget: int = 400_000,
    temperature: float = 1.0,
    max_output: int = 16384,
    events=None,
    event_extra: dict | None = None,
) -> ProofOutcome:
    """Run one prover campaign for a single conjecture."""
    system_prompt = PROVER_PROMPT_VARIANTS[prompt_variant]
    truncations: list[str] = []
    context = render_context(
        library, [conjecture], context_budget, warnings=truncations
    )
    attempts: list[ProofAttempt] = []
    previous: tuple[str, tuple[Diagnostic, ...]] | None = None

    def emit_attempt(trial: int, proof_text: str, result: CheckResult | None) -> None:
        if events is None:
            return
        payload = dict(event_extra or {})
        payload.update(
            conjecture=conjecture.name,
            trial=trial,
            proof=proof_text,
            verdict=None if result is None else result.verdict,
            diagnostics=[]
            if result is None
            else [d.format() for d in result.diagnostics],
            empty_response=result is None,
        )
        events.emit("proof_attempt", **payload)

    if events is not None:
        for note in truncations:
            payload = dict(event_extra or {})
            payload.update(message=note, where="prover_context")
            events.emit("warning", **payload)

    for trial in range(1, max_trials + 1):
        if previous is None:
            user_content = context
        else:
            user_content = format_feedback(context, previous[0], previous[1])
        request = ChatRequest(
            role_id="prover",
            system_prompt=system_prompt,
            user_content=user_content,
            temperature=temperature,
            max_output=max_output,
        )
        try:
            response = gateway.complete(request)
        except TransportError as exc:
            result = _synthetic_failure(f"gateway transport failure: {exc}")
            attempts.append(ProofAttempt(proof_text="", result=result))
            emit_attempt(trial, "", result)
            previous = ("", result.diagnostics)
            continue

        text = strip_code_fences(response.text).strip()
        if not text:
            # Surrender signal: no verifier call for this trial.
            attempts.append(ProofAttempt(proof_text="", result=None))
            emit_attempt(trial, "", None)
            return ProofOutcome(
                status=STATUS_UNPROVABLE, attempts=tuple(attempts)
            )

        try:
            proof = ProofScript(text=text)
        except ValueError as exc:
            result = _synthetic_failure(f"rejected before submission: {exc}")
            attempts.append(ProofAttempt(proof_text=text, result=result))
            emit_attempt(trial, text, result)
            previous = (text, result.diagnostics)
            continue

        result = verify_with_retry(session, context, conjecture, proof)
        attempts.append(ProofAttempt(proof_text=text, result=result))
        emit_attempt(trial, text, result)
        if result.verdict == VERIFIED:
            return ProofOutcome(
                status=STATUS_VERIFIED,
                attempts=tuple(attempts),
                final_proof=proof,
            )
        previous = (text, result.diagnostics)

    return ProofOutcome(status=STATUS_FAILED, attempts=tuple(attempts))
