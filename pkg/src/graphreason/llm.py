"""Model access layer: wire and replay backends, metering, output parsing.

Every completion flows through :func:`complete`, which increments the
per-run call meter exactly once per request (tagged, so generation calls
can be budgeted separately from pruning/evaluation/judging) and applies the
transport retry policy. Malformed-output handling is a separate, single
re-ask with a format reminder, after which the call site falls back to its
documented deterministic behavior.

The replay backend makes whole runs bit-reproducible: it serves canned
responses from a line-delimited script of ``{"match": ..., "response": ...}``
records, either consumed strictly in order (each match checked as a
substring of the prompt) or scanned statelessly for the first match.
"""

from __future__ import annotations

import json
import logging
import os
import re
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol, TypeVar

import requests

from . import prompts
from .costs import REASK_SUFFIX, CostCounters

logger = logging.getLogger(__name__)

TOKEN_ENV_VAR = "GRAPHREASON_API_TOKEN"

MAX_TRANSPORT_RETRIES = 2

FORMAT_REMINDER = (
    "\nReminder: answer in exactly the format requested above, placing the "
    "final answer inside the brackets."
)

T = TypeVar("T")


class TransportError(Exception):
    """The backend could not produce a completion (network, HTTP, shape)."""


class ReplayMismatchError(TransportError):
    """A replay script had no entry for the request."""


class MalformedOutputError(Exception):
    """Model output did not contain the span the call site needs."""


@dataclass(frozen=True)
class DecodingParams:
    temperature: float = 0.0
    max_tokens: int = 256
    stop: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ValueError(f"temperature must be >= 0, got {self.temperature}")
        if self.max_tokens <= 0:
            raise ValueError(f"max_tokens must be positive, got {self.max_tokens}")


@dataclass(frozen=True)
class CompletionRequest:
    prompt: str
    decoding: DecodingParams
    tag: str


class Backend(Protocol):
    def raw_complete(self, request: CompletionRequest) -> str: ...


# Thought generation samples; everything mechanical decodes greedily.
_THOUGHT_DECODING = DecodingParams(temperature=0.7, max_tokens=512)
_CONTROL_DECODING = DecodingParams(temperature=0.0, max_tokens=256)

DEFAULT_DECODING: dict[str, DecodingParams] = {
    "agent_step": DecodingParams(temperature=0.7, max_tokens=512, stop=("\nObservation",)),
    "search_thought": _THOUGHT_DECODING,
    "got_merge": _THOUGHT_DECODING,
    "search_end": _CONTROL_DECODING,
    "entity_extraction": _CONTROL_DECODING,
    "prune_relations": _CONTROL_DECODING,
    "prune_entities": _CONTROL_DECODING,
    "search_attributes": _CONTROL_DECODING,
    "selection_vote": _CONTROL_DECODING,
    "score_vote": _CONTROL_DECODING,
    "judge_correctness": _CONTROL_DECODING,
    "judge_error_class": _CONTROL_DECODING,
}


def request_for(
    template_name: str,
    variables: dict[str, str],
    *,
    tag: str,
    decoding: DecodingParams | None = None,
) -> CompletionRequest:
    """Render a registry template into a tagged completion request."""
    template = prompts.get_template(template_name)
    prompt = prompts.render(template, variables)
    if decoding is None:
        decoding = DEFAULT_DECODING[template_name]
    return CompletionRequest(prompt=prompt, decoding=decoding, tag=tag)


@dataclass(frozen=True)
class ReplayEntry:
    match: str
    response: str


class ReplayBackend:
    """Serves scripted responses; the basis of reproducible offline runs.

    Strict mode consumes entries in order and fails loudly when the next
    entry's ``match`` is not a substring of the incoming prompt — the right
    mode for golden-trace tests. Non-strict mode statelessly returns the
    first entry whose ``match`` occurs in the prompt, so one script can
    serve many structurally similar requests.
    """

    def __init__(self, entries: list[ReplayEntry], *, strict: bool = False) -> None:
        self.entries = list(entries)
        self.strict = strict
        self._cursor = 0
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path: str | Path, *, strict: bool = False) -> "ReplayBackend":
        entries = []
        with open(path, encoding="utf-8") as handle:
            for lineno, line in enumerate(handle, start=1):
                if not line.strip():
                    continue
                try:
                    record = json.loads(line)
                    entries.append(ReplayEntry(match=record["match"], response=record["response"]))
                except (json.JSONDecodeError, KeyError, TypeError) as exc:
                    raise ValueError(f"{path}:{lineno}: bad replay record: {exc}") from exc
        return cls(entries, strict=strict)

    def raw_complete(self, request: CompletionRequest) -> str:
        with self._lock:
            if self.strict:
                if self._cursor >= len(self.entries):
                    raise ReplayMismatchError(
                        f"replay script exhausted after {len(self.entries)} entries; "
                        f"unmatched prompt starts: {request.prompt[:120]!r}"
                    )
                entry = self.entries[self._cursor]
                if entry.match not in request.prompt:
                    raise ReplayMismatchError(
                        f"replay entry {self._cursor} expects {entry.match!r} "
                        f"in prompt starting: {request.prompt[:120]!r}"
                    )
                self._cursor += 1
                return entry.response
            for entry in self.entries:
                if entry.match in request.prompt:
                    return entry.response
            raise ReplayMismatchError(
                f"no replay entry matches prompt starting: {request.prompt[:120]!r}"
            )

    def remaining(self) -> int:
        """Unconsumed entry count (strict mode); handy for exhaustion checks."""
        return len(self.entries) - self._cursor


@dataclass
class WireBackend:
    """Chat-completions endpoint client.

    Auth token comes from the environment (never a flag, never logged).
    ``max_in_flight`` caps concurrent outbound requests.
    """

    endpoint: str
    model: str
    timeout_s: float = 60.0
    max_in_flight: int = 4
    _gate: threading.Semaphore = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if self.max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")
        self._gate = threading.Semaphore(self.max_in_flight)

    def raw_complete(self, request: CompletionRequest) -> str:
        headers = {"Content-Type": "application/json"}
        token = os.environ.get(TOKEN_ENV_VAR)
        if token:
            headers["Authorization"] = f"Bearer {token}"
        payload: dict[str, object] = {
            "model": self.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.decoding.temperature,
            "max_tokens": request.decoding.max_tokens,
        }
        if request.decoding.stop:
            payload["stop"] = list(request.decoding.stop)
        with self._gate:
            try:
                response = requests.post(
                    self.endpoint, json=payload, headers=headers, timeout=self.timeout_s
                )
                response.raise_for_status()
                body = response.json()
            except requests.RequestException as exc:
                raise TransportError(f"wire request failed: {exc}") from exc
            except ValueError as exc:
                raise TransportError(f"wire response is not JSON: {exc}") from exc
        try:
            content = body["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise TransportError("wire response missing choices[0].message.content") from exc
        if not isinstance(content, str):
            raise TransportError("wire response content is not a string")
        return content


def complete(backend: Backend, request: CompletionRequest, counters: CostCounters) -> str:
    """Run one completion with transport retries; meter exactly one call.

    The call meter ticks once per request under ``request.tag`` no matter
    how many transport attempts were needed or whether they all failed;
    retries are counted separately.
    """
    counters.record_llm_call(request.tag)
    last_error: TransportError | None = None
    for attempt in range(1 + MAX_TRANSPORT_RETRIES):
        if attempt > 0:
            counters.record_transport_retry()
            logger.debug("transport retry %d for tag %s", attempt, request.tag)
        try:
            return backend.raw_complete(request)
        except ReplayMismatchError:
            raise  # a script mismatch is a test failure signal, not flakiness
        except TransportError as exc:
            last_error = exc
    assert last_error is not None
    raise last_error


def complete_with_reask(
    backend: Backend,
    request: CompletionRequest,
    counters: CostCounters,
    parse: Callable[[str], T],
) -> T:
    """Complete, parse, and on malformed output re-ask once with a reminder.

    The re-ask is its own metered call tagged ``<tag>:reask``. A second
    malformed reply propagates MalformedOutputError so the call site can
    apply its deterministic fallback.
    """
    text = complete(backend, request, counters)
    try:
        return parse(text)
    except MalformedOutputError:
        logger.debug("malformed output for tag %s; re-asking", request.tag)
        retry = CompletionRequest(
            prompt=request.prompt + FORMAT_REMINDER,
            decoding=request.decoding,
            tag=request.tag + REASK_SUFFIX,
        )
        text = complete(backend, retry, counters)
        return parse(text)


_BRACKET_SPAN_RE = re.compile(r"\{\{(.*?)\}\}|\[(.*?)\]", re.DOTALL)


def parse_bracketed_answer(text: str) -> str:
    """Extract the last ``{{...}}`` or ``[...]`` span, trimmed.

    Raises:
        MalformedOutputError: no bracketed span anywhere in the text.
    """
    last: str | None = None
    for match in _BRACKET_SPAN_RE.finditer(text):
        group = match.group(1) if match.group(1) is not None else match.group(2)
        last = group
    if last is None:
        raise MalformedOutputError(f"no bracketed answer span in: {text[:120]!r}")
    return last.strip()


def parse_yes_no(text: str) -> bool:
    """Strict Yes/No reading of the bracketed span."""
    token = parse_bracketed_answer(text).casefold()
    if token == "yes":
        return True
    if token == "no":
        return False
    raise MalformedOutputError(f"expected Yes or No, got {token!r}")


_NUMBER_RE = re.compile(r"-?\d+(?:\.\d+)?")


def parse_last_number(text: str) -> float:
    """Return the last numeric literal in the text (score votes)."""
    numbers = _NUMBER_RE.findall(text)
    if not numbers:
        raise MalformedOutputError(f"no number in: {text[:120]!r}")
    return float(numbers[-1])
