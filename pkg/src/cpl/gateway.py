"""Uniform chat-completion gateway with retry, pacing, and transcripts.

Providers are duck-typed: anything with ``complete(request) -> str``.
The shipped ones are an HTTP client for chat-completions endpoints, a
deterministic replay provider fed from recorded fixtures, a recording
wrapper, and an in-memory queue provider for tests and dry runs.
"""

from __future__ import annotations

import json
import logging
import os
import threading
import time
import urllib.error
import urllib.request
from dataclasses import dataclass
from pathlib import Path

logger = logging.getLogger(__name__)

ROLE_IDS = ("conjecturer", "prover", "simple_loop", "nl_prover")

DEFAULT_TEMPERATURE = 1.0
DEFAULT_MAX_OUTPUT = 16384
DEFAULT_RETRY_CAP = 3
DEFAULT_API_KEY_ENV = "CPL_API_KEY"


class TransportError(Exception):
    """Retryable provider failure; a trial using it counts as failed."""


class FatalGatewayError(Exception):
    """Unrecoverable misconfiguration; the run must halt."""


class FixtureExhaustedError(FatalGatewayError):
    """The replay fixtures ran out before the pipeline finished."""


@dataclass(frozen=True)
class ChatRequest:
    role_id: str
    system_prompt: str
    user_content: str
    temperature: float = DEFAULT_TEMPERATURE
    max_output: int = DEFAULT_MAX_OUTPUT

    def __post_init__(self) -> None:
        if self.role_id not in ROLE_IDS:
            raise ValueError(f"unknown role {self.role_id!r}")


@dataclass(frozen=True)
class ChatResponse:
    text: str
    provider: str
    latency: float
    attempt: int


class HttpChatProvider:
    """Client for the common chat-completions JSON schema.

    The credential is read from the environment at call time and never
    logged or persisted anywhere.
    """

    name = "http"

    def __init__(
        self,
        endpoint: str,
        models: dict[str, str],
        api_key_env: str = DEFAULT_API_KEY_ENV,
        timeout: float = 300.0,
    ):
        self.endpoint = endpoint
        self.models = dict(models)
        self.api_key_env = api_key_env
        self.timeout = timeout

    def complete(self, request: ChatRequest) -> str:
        api_key = os.environ.get(self.api_key_env, "")
        if not api_key:
            raise FatalGatewayError(
                f"missing credential: set {self.api_key_env} in the environment"
            )
        model = self.models.get(request.role_id)
        if not model:
            raise FatalGatewayError(f"no model configured for role {request.role_id!r}")
        payload = {
            "model": model,
            "messages": [
                {"role": "system", "content": request.system_prompt},
                {"role": "user", "content": request.user_content},
            ],
            "temperature": request.temperature,
        }
        if request.max_output:
            payload["max_tokens"] = request.max_output
        data = json.dumps(payload).encode("utf-8")
        req = urllib.request.Request(
            self.endpoint,
            data=data,
            headers={
                "Content-Type": "application/json",
                "Authorization": f"Bearer {api_key}",
            },
        )
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                body = json.loads(resp.read().decode("utf-8"))
        except urllib.error.HTTPError as exc:
            if exc.code in (401, 403):
                raise FatalGatewayError(
                    f"endpoint rejected the credential (HTTP {exc.code}); "
                    f"check {self.api_key_env}"
                ) from exc
            raise TransportError(f"HTTP {exc.code} from provider") from exc
        except (urllib.error.URLError, TimeoutError, OSError) as exc:
            raise TransportError(f"provider unreachable: {exc}") from exc
        try:
            return body["choices"][0]["message"]["content"] or ""
        except (KeyError, IndexError, TypeError) as exc:
            raise TransportError(f"malformed provider response: {exc}") from exc


class QueueProvider:
    """In-memory per-role response queues (tests, dry runs)."""

    name = "queue"

    def __init__(self, responses: dict[str, list[str]] | None = None):
        self._queues = {role: list(items) for role, items in (responses or {}).items()}

    def push(self, role_id: str, *texts: str) -> None:
        self._queues.setdefault(role_id, []).extend(texts)

    def complete(self, request: ChatRequest) -> str:
        queue = self._queues.get(request.role_id)
        if not queue:
            raise FixtureExhaustedError(
                f"no queued response left for role {request.role_id!r}"
            )
        return queue.pop(0)


class CallableProvider:
    """Adapter turning a function of the request into a provider."""

    name = "callable"

    def __init__(self, fn):
        self._fn = fn

    def complete(self, request: ChatRequest) -> str:
        return self._fn(request)


class ReplayProvider:
    """Deterministic provider replaying recorded exchanges.

    Replay is keyed on (role_id, per-role call index) only, never on
    prompt content, so cosmetic context changes cannot break a replay.
    """

    name = "replay"

    def __init__(self, responses: dict[str, list[str]]):
        self._responses = {role: list(items) for role, items in responses.items()}
        self._cursor = {role: 0 for role in self._responses}

    @classmethod
    def from_dir(cls, session_dir: str | Path) -> "ReplayProvider":
        session_dir = Path(session_dir)
        responses: dict[str, list[str]] = {}
        for role in ROLE_IDS:
            path = session_dir / f"{role}.jsonl"
            if not path.exists():
                continue
            items: list[tuple[int, str]] = []
            with open(path, encoding="utf-8") as handle:
                for line in handle:
                    line = line.strip()
                    if not line:
                        continue
                    record = json.loads(line)
                    items.append((record["index"], record["response"]))
            items.sort(key=lambda pair: pair[0])
            responses[role] = [text for _, text in items]
        if not responses:
            raise FixtureExhaustedError(f"no replay fixtures found in {session_dir}")
        return cls(responses)

    def fast_forward(self, role_id: str, count: int) -> None:
        self._cursor[role_id] = count

    def complete(self, request: ChatRequest) -> str:
        items = self._responses.get(request.role_id, [])
        cursor = self._cursor.setdefault(request.role_id, 0)
        if cursor >= len(items):
            raise FixtureExhaustedError(
                f"replay fixtures exhausted for role {request.role_id!r} "
                f"at call index {cursor}"
            )
        self._cursor[request.role_id] = cursor + 1
        return items[cursor]


class RecordingProvider:
    """Wraps a live provider and persists every exchange for replay."""

    def __init__(self, inner, session_dir: str | Path):
        self._inner = inner
        self.name = getattr(inner, "name", "unknown")
        self._dir = Path(session_dir)
        try:
            self._dir.mkdir(parents=True, exist_ok=True)
            probe = self._dir / ".write-probe"
            probe.write_text("", encoding="utf-8")
            probe.unlink()
        except OSError as exc:
            raise FatalGatewayError(
                f"record directory {self._dir} is not writable: {exc}"
            ) from exc
        self._indices: dict[str, int] = {}

    def fast_forward(self, role_id: str, count: int) -> None:
        self._indices[role_id] = count
        if hasattr(self._inner, "fast_forward"):
            self._inner.fast_forward(role_id, count)

    def complete(self, request: ChatRequest) -> str:
        text = self._inner.complete(request)
        index = self._indices.get(request.role_id, 0)
        self._indices[request.role_id] = index + 1
        record = {
            "index": index,
            "role_id": request.role_id,
            "request": {
                "system_prompt": request.system_prompt,
                "user_content": request.user_content,
                "temperature": request.temperature,
                "max_output": request.max_output,
            },
            "response": text,
        }
        path = self._dir / f"{request.role_id}.jsonl"
        with open(path, "a", encoding="utf-8") as handle:
            handle.write(json.dumps(record, ensure_ascii=False) + "\n")
        return text


class TokenBucket:
    """Simple token bucket; rate is requests per second."""

    def __init__(self, rate: float, monotonic=time.monotonic, sleep=time.sleep):
        self.interval = 1.0 / rate
        self._monotonic = monotonic
        self._sleep = sleep
        self._next_free = 0.0

    def acquire(self) -> None:
        now = self._monotonic()
        wait = self._next_free - now
        if wait > 0:
            self._sleep(wait)
            now = self._next_free
        self._next_free = max(now, self._next_free) + self.interval


class Gateway:
    """Shared completion front-end: retries, pacing, transcript logging."""

    def __init__(
        self,
        provider,
        retry_cap: int = DEFAULT_RETRY_CAP,
        backoff_base: float = 1.0,
        rate_limit_rps: float | None = None,
        transcript_path: str | Path | None = None,
        clock=None,
        sleep=time.sleep,
    ):
        self.provider = provider
        self.retry_cap = retry_cap
        self.backoff_base = backoff_base
        self._sleep = sleep
        self._bucket = TokenBucket(rate_limit_rps) if rate_limit_rps else None
        self._transcript_path = Path(transcript_path) if transcript_path else None
        self._clock = clock
        self._lock = threading.Lock()
        self.calls_by_role: dict[str, int] = {role: 0 for role in ROLE_IDS}
        self._transcript_sequence = 0

    def fast_forward(self, calls_by_role: dict[str, int]) -> None:
        """Restore per-role call counters (and replay cursors) on resume."""
        for role, count in calls_by_role.items():
            self.calls_by_role[role] = count
            if hasattr(self.provider, "fast_forward"):
                self.provider.fast_forward(role, count)

    def complete(self, request: ChatRequest) -> ChatResponse:
        if self._bucket is not None:
            self._bucket.acquire()
        last_error: TransportError | None = None
        for attempt in range(1, self.retry_cap + 1):
            started = time.monotonic()
            try:
                text = self.provider.complete(request)
            except TransportError as exc:
                last_error = exc
                logger.warning(
                    "provider attempt %d/%d failed for %s: %s",
                    attempt,
                    self.retry_cap,
                    request.role_id,
                    exc,
                )
                if attempt < self.retry_cap:
                    self._sleep(self.backoff_base * (2 ** (attempt - 1)))
                continue
            latency = time.monotonic() - started
            # Trailing-newline normalization only; a whitespace-only
            # response is the empty (surrender) signal.
            text = text.rstrip("\n")
            if not text.strip():
                text = ""
            response = ChatResponse(
                text=text,
                provider=getattr(self.provider, "name", "unknown"),
                latency=latency,
                attempt=attempt,
            )
            self._record(request, response)
            return response
        self._record(request, None, error=str(last_error))
        raise TransportError(
            f"retries exhausted ({self.retry_cap}) for role {request.role_id!r}: "
            f"{last_error}"
        )

    def _record(
        self,
        request: ChatRequest,
        response: ChatResponse | None,
        error: str | None = None,
    ) -> None:
        with self._lock:
            self.calls_by_role[request.role_id] = (
                self.calls_by_role.get(request.role_id, 0) + 1
            )
            if self._transcript_path is None:
                return
            entry = {
                "sequence": self._transcript_sequence,
                "timestamp": self._clock.now() if self._clock else None,
                "role_id": request.role_id,
                "request": {
                    "system_prompt": request.system_prompt,
                    "user_content": request.user_content,
                    "temperature": request.temperature,
                    "max_output": request.max_output,
                },
                "response": None
                if response is None
                else {
                    "text": response.text,
                    "provider": response.provider,
                    "latency": response.latency,
                    "attempt": response.attempt,
                },
                "error": error,
            }
            self._transcript_sequence += 1
            with open(self._transcript_path, "a", encoding="utf-8") as handle:
                handle.write(json.dumps(entry, ensure_ascii=False) + "\n")


def read_transcript(path: str | Path) -> list[dict]:
    entries = []
    with open(path, encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if line:
                entries.append(json.loads(line))
    return entries
