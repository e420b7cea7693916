"""Stateless LLM invocation boundary.

Every call carries one system+user pair and retains no conversation state.
Transient failures retry with exponential backoff; structurally invalid
responses trigger one bounded re-ask with the violation names appended,
after which the affected rows are reported as failures rather than
silently defaulted. Usage (tokens, wall time, retries) accumulates in a
ledger whose totals are order-independent, and a scripted mock backend
keyed by prompt hash makes the whole pipeline reproducible offline.
"""

from __future__ import annotations

import hashlib
import json
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Protocol, Sequence

from .prompts import PromptBundle


class BackendError(RuntimeError):
    """Non-retriable backend failure."""


class TransientBackendError(BackendError):
    """Retriable failure (rate limit, timeout, 5xx)."""


class MockScriptMiss(BackendError):
    """The mock script has no response for a prompt hash."""


@dataclass(frozen=True)
class Pricing:
    """Exactly one pricing mode: per-token, hourly, or amortized fixed fee."""

    input_rate: float | None = None
    output_rate: float | None = None
    hourly_rate: float | None = None
    fixed_fee: float | None = None
    amortized_over: int | None = None

    def __post_init__(self) -> None:
        token = self.input_rate is not None and self.output_rate is not None
        hourly = self.hourly_rate is not None
        fixed = self.fixed_fee is not None and self.amortized_over is not None
        if sum((token, hourly, fixed)) != 1:
            raise ValueError("exactly one pricing mode must be set")

    @property
    def mode(self) -> str:
        if self.hourly_rate is not None:
            return "hourly"
        if self.fixed_fee is not None:
            return "fixed"
        return "token"


@dataclass(frozen=True)
class BackendConfig:
    backend_id: str
    endpoint: str  # URL or "mock"
    model_name: str
    pricing: Pricing
    temperature: float = 0.0
    max_tokens: int = 4096
    max_parallel: int = 4
    max_retries: int = 3

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_parallel < 1 or self.max_retries < 0:
            raise ValueError("bad parallelism or retry limits")


@dataclass(frozen=True)
class UsageRecord:
    prompt_tokens: int
    completion_tokens: int
    wall_seconds: float
    retries: int


class UsageLedger:
    """Append-only usage log; appends are thread-safe, totals order-free."""

    def __init__(self) -> None:
        self._records: list[UsageRecord] = []
        self._lock = threading.Lock()

    def append(self, record: UsageRecord) -> None:
        with self._lock:
            self._records.append(record)

    @property
    def records(self) -> list[UsageRecord]:
        with self._lock:
            return list(self._records)

    @property
    def total_prompt_tokens(self) -> int:
        return sum(r.prompt_tokens for r in self.records)

    @property
    def total_completion_tokens(self) -> int:
        return sum(r.completion_tokens for r in self.records)

    @property
    def total_wall_seconds(self) -> float:
        return sum(r.wall_seconds for r in self.records)

    @property
    def total_retries(self) -> int:
        return sum(r.retries for r in self.records)

    def to_dict(self) -> dict[str, object]:
        return {
            "calls": len(self.records),
            "prompt_tokens": self.total_prompt_tokens,
            "completion_tokens": self.total_completion_tokens,
            "wall_seconds": self.total_wall_seconds,
            "retries": self.total_retries,
        }


def prompt_sha256(bundle: PromptBundle) -> str:
    """Stable content hash of a prompt; the mock script key."""
    digest = hashlib.sha256()
    digest.update(bundle.system.encode("utf-8"))
    digest.update(b"\x1e")
    digest.update(bundle.user.encode("utf-8"))
    return digest.hexdigest()


def _token_count(text: str) -> int:
    return len(text.split())


class Backend(Protocol):
    def complete(self, bundle: PromptBundle, config: BackendConfig) -> tuple[str, int, int, float]:
        """Return (response, prompt_tokens, completion_tokens, wall_seconds)."""


class MockBackend:
    """Deterministic replay backend.

    The script is JSON Lines of ``{"prompt_sha256": ..., "response": ...}``
    plus optional fault entries ``{"prompt_sha256": ..., "fault":
    "transient", "count": n}`` that fail the first n invocations of that
    prompt. Token counts are whitespace token counts and wall time is
    reported as zero, so replayed runs are bit-identical.
    """

    def __init__(self, script: Mapping[str, str], faults: Mapping[str, int] | None = None):
        self.script = dict(script)
        self.faults = dict(faults or {})
        self._calls: dict[str, int] = {}
        self._lock = threading.Lock()

    @classmethod
    def from_script_file(cls, path: str | Path) -> "MockBackend":
        script: dict[str, str] = {}
        faults: dict[str, int] = {}
        with Path(path).open(encoding="utf-8") as handle:
            for line in handle:
                line = line.strip()
                if not line:
                    continue
                entry = json.loads(line)
                key = entry["prompt_sha256"]
                if "fault" in entry:
                    faults[key] = int(entry.get("count", 1))
                else:
                    script[key] = entry["response"]
        return cls(script, faults)

    def complete(self, bundle: PromptBundle, config: BackendConfig) -> tuple[str, int, int, float]:
        key = prompt_sha256(bundle)
        with self._lock:
            seen = self._calls.get(key, 0)
            self._calls[key] = seen + 1
        if seen < self.faults.get(key, 0):
            raise TransientBackendError(f"scripted transient fault for {key[:12]}")
        if key not in self.script:
            raise MockScriptMiss(f"no scripted response for prompt {key[:12]}")
        response = self.script[key]
        return response, _token_count(bundle.system) + _token_count(bundle.user), _token_count(response), 0.0


class HttpBackend:
    """Chat-completion style HTTP backend.

    Credentials come from the environment variable ``<BACKEND_ID>_API_KEY``
    and are never written to transcripts.
    """

    def __init__(self, session=None):
        if session is None:
            import requests

            session = requests.Session()
        self.session = session

    def complete(self, bundle: PromptBundle, config: BackendConfig) -> tuple[str, int, int, float]:
        import os

        headers = {"Content-Type": "application/json"}
        api_key = os.environ.get(f"{config.backend_id.upper()}_API_KEY")
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        payload = {
            "model": config.model_name,
            "messages": [
                {"role": "system", "content": bundle.system},
                {"role": "user", "content": bundle.user},
            ],
            "temperature": config.temperature,
            "max_tokens": config.max_tokens,
        }
        started = time.monotonic()
        response = self.session.post(config.endpoint, json=payload, headers=headers, timeout=120)
        elapsed = time.monotonic() - started
        if response.status_code in (429, 500, 502, 503, 504):
            raise TransientBackendError(f"HTTP {response.status_code}")
        if response.status_code == 401:
            raise BackendError("authentication failure")
        if response.status_code != 200:
            raise BackendError(f"HTTP {response.status_code}: {response.text[:200]}")
        body = response.json()
        text = body["choices"][0]["message"]["content"]
        usage = body.get("usage", {})
        return (
            text,
            int(usage.get("prompt_tokens", _token_count(bundle.system) + _token_count(bundle.user))),
            int(usage.get("completion_tokens", _token_count(text))),
            elapsed,
        )


def make_backend(config: BackendConfig, script_path: str | Path | None = None) -> Backend:
    if config.endpoint == "mock":
        if script_path is None:
            raise ValueError("mock backend needs a script file")
        return MockBackend.from_script_file(script_path)
    return HttpBackend()


class TranscriptWriter:
    """JSON Lines audit log of every request/response pair."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()

    def write(self, entry: Mapping[str, object]) -> None:
        with self._lock:
            with self.path.open("a", encoding="utf-8") as handle:
                handle.write(json.dumps(entry) + "\n")


def invoke(
    bundle: PromptBundle,
    config: BackendConfig,
    backend: Backend,
    ledger: UsageLedger | None = None,
    transcript: TranscriptWriter | None = None,
    backoff_base: float = 0.5,
) -> tuple[str, UsageRecord]:
    """One stateless request with retries on transient failures."""
    retries = 0
    while True:
        try:
            response, prompt_tokens, completion_tokens, wall = backend.complete(bundle, config)
            break
        except TransientBackendError:
            if retries >= config.max_retries:
                raise
            if backoff_base > 0:
                time.sleep(backoff_base * (2 ** retries))
            retries += 1
    if completion_tokens > config.max_tokens:
        raise BackendError(
            f"response size over limit ({completion_tokens} > {config.max_tokens} tokens)"
        )
    usage = UsageRecord(prompt_tokens, completion_tokens, wall, retries)
    if ledger is not None:
        ledger.append(usage)
    if transcript is not None:
        transcript.write({
            "kind": bundle.kind.value,
            "prompt_sha256": prompt_sha256(bundle),
            "model": config.model_name,
            "response": response,
            "prompt_tokens": prompt_tokens,
            "completion_tokens": completion_tokens,
            "retries": retries,
        })
    return response, usage


def make_reask_bundle(bundle: PromptBundle, violation_names: Sequence[str]) -> PromptBundle:
    """The follow-up prompt sent after a validation failure."""
    feedback = (
        f"\n\nYour previous response violated the required format: "
        f"{', '.join(sorted(set(violation_names)))}. "
        "Re-send ALL lines in the exact required format."
    )
    return PromptBundle(
        system=bundle.system,
        user=bundle.user + feedback,
        expected_rows=bundle.expected_rows,
        kind=bundle.kind,
    )


RowResults = dict[int, tuple[object, list[str]]]


@dataclass
class ValidatedInvocation:
    """Per-row outcome of a validated call: payloads for clean rows, violations otherwise."""

    payloads: dict[int, object] = field(default_factory=dict)
    failures: dict[int, list[str]] = field(default_factory=dict)
    reasks: int = 0
    responses: list[str] = field(default_factory=list)

    @property
    def clean(self) -> bool:
        return not self.failures


def invoke_validated(
    bundle: PromptBundle,
    config: BackendConfig,
    validator: Callable[[str], RowResults],
    backend: Backend,
    max_reasks: int = 1,
    ledger: UsageLedger | None = None,
    transcript: TranscriptWriter | None = None,
    backoff_base: float = 0.5,
) -> ValidatedInvocation:
    """Invoke, validate per row, and re-ask at most ``max_reasks`` times.

    Rows that validate on any attempt keep their first valid payload; rows
    still invalid after the final attempt are reported with the violations
    from every attempt. Rows are never silently defaulted.
    """
    outcome = ValidatedInvocation()
    attempt_violations: dict[int, list[str]] = {}
    current = bundle
    for attempt in range(max_reasks + 1):
        response, _ = invoke(current, config, backend, ledger, transcript, backoff_base)
        outcome.responses.append(response)
        pending = [row for row in bundle.expected_rows if row not in outcome.payloads]
        results = validator(response)
        bad_names: list[str] = []
        for row in pending:
            payload, violations = results.get(row, (None, ["missing_row"]))
            if payload is not None and not violations:
                outcome.payloads[row] = payload
            else:
                attempt_violations.setdefault(row, []).extend(violations)
                bad_names.extend(violations)
        if not bad_names:
            return outcome
        if attempt < max_reasks:
            outcome.reasks += 1
            current = make_reask_bundle(bundle, bad_names)
    for row in bundle.expected_rows:
        if row not in outcome.payloads:
            outcome.failures[row] = attempt_violations.get(row, ["missing_row"])
    return outcome


class TranscriptBuffer:
    """Collects transcript entries in memory for ordered flushing."""

    def __init__(self) -> None:
        self.entries: list[dict] = []

    def write(self, entry: Mapping[str, object]) -> None:
        self.entries.append(dict(entry))


def invoke_validated_many(
    tasks: Sequence[tuple[PromptBundle, Callable[[str], RowResults]]],
    config: BackendConfig,
    backend: Backend,
    max_reasks: int = 1,
    ledger: UsageLedger | None = None,
    transcript: TranscriptWriter | None = None,
    backoff_base: float = 0.5,
) -> list[ValidatedInvocation | BackendError]:
    """Run validated invocations with up to max_parallel in flight.

    Results come back in task order; a task whose backend call fails
    terminally yields the exception instead of an outcome. Transcript
    entries are flushed in task order afterwards, so parallel runs leave
    the same audit trail as sequential ones.
    """
    buffers = [TranscriptBuffer() for _ in tasks]

    def run(i: int) -> ValidatedInvocation | BackendError:
        bundle, validator = tasks[i]
        try:
            return invoke_validated(
                bundle, config, validator, backend,
                max_reasks=max_reasks, ledger=ledger,
                transcript=buffers[i], backoff_base=backoff_base,
            )
        except BackendError as exc:
            return exc

    if config.max_parallel <= 1 or len(tasks) <= 1:
        outcomes = [run(i) for i in range(len(tasks))]
    else:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=config.max_parallel) as pool:
            outcomes = list(pool.map(run, range(len(tasks))))
    if transcript is not None:
        for buffer in buffers:
            for entry in buffer.entries:
                transcript.write(entry)
    return outcomes


def cost_index(ledger: UsageLedger, config: BackendConfig, n_samples: int) -> float:
    """Per-sample cost of the recorded usage under the configured pricing."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    pricing = config.pricing
    if pricing.mode == "token":
        total = (
            ledger.total_prompt_tokens * pricing.input_rate
            + ledger.total_completion_tokens * pricing.output_rate
        )
        return total / n_samples
    if pricing.mode == "hourly":
        return (ledger.total_wall_seconds / 3600.0) * pricing.hourly_rate / n_samples
    return pricing.fixed_fee / pricing.amortized_over
