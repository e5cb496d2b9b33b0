"""Backend-agnostic model client: prompt builders, structured-response
parsing, and the backends themselves.

Two offline backends (scripted fixtures, rule oracle) make every pipeline
path testable without a network; the remote backend speaks a minimal
"send parts, get text" HTTP JSON protocol.

Prompt builders are pure functions: identical inputs produce byte-identical
requests, which golden tests and the playback story depend on.
"""

from __future__ import annotations

import asyncio
import hashlib
import json
import os
import re
from dataclasses import dataclass
from importlib import resources
from typing import Optional, Sequence, Union

import httpx

from .clock import Clock, RealClock
from .errors import BackendError, BackendTimeout, FixtureMissing, ParseFailure
from .model import (
    Criterion,
    CriterionResult,
    ExampleKind,
    Frame,
    Valence,
    canonical_json,
)


class ModelRole:
    CRITERION = "criterion_tier"
    REASONING = "reasoning_tier"


class ResponseSchema:
    CRITERION_JUDGMENT = "criterion_judgment"
    VERDICT_JUDGMENT = "verdict_judgment"
    CRITERIA_LIST = "criteria_list"
    DIFF_RESULT = "diff_result"
    TEST_CASE_LIST = "test_case_list"
    TITLE_ONLY = "title_only"


@dataclass(frozen=True)
class TextPart:
    text: str


@dataclass(frozen=True)
class ImagePart:
    frame_id: str
    # oracle-only metadata; excluded from the request fingerprint
    tags: tuple = ()


Part = Union[TextPart, ImagePart]


@dataclass(frozen=True)
class ModelRequest:
    role: str
    system_instructions: str
    user_parts: tuple
    temperature: float
    response_schema: str
    template_id: str

    def __post_init__(self):
        object.__setattr__(self, "user_parts", tuple(self.user_parts))
        if not 0.0 <= self.temperature <= 1.0:
            raise ValueError("temperature must lie in [0, 1]")

    def text_content(self) -> str:
        return "\n".join(p.text for p in self.user_parts if isinstance(p, TextPart))


@dataclass(frozen=True)
class ModelResponse:
    raw_text: str
    parsed: object
    model_id: str
    latency_ms: int


def load_template(template_id: str) -> str:
    return (resources.files("sensorforge") / "templates" / f"{template_id}.txt").read_text(
        encoding="utf-8"
    )


def fingerprint(request: ModelRequest) -> str:
    """Stable hash of a request: image parts collapse to their frame_ids so
    fixtures survive image re-encoding."""
    parts = [
        {"text": p.text} if isinstance(p, TextPart) else {"image": p.frame_id}
        for p in request.user_parts
    ]
    payload = {
        "role": request.role,
        "system_instructions": request.system_instructions,
        "user_parts": parts,
        "temperature": request.temperature,
        "response_schema": request.response_schema,
        "template_id": request.template_id,
    }
    return hashlib.sha256(canonical_json(payload)).hexdigest()


# ---------------------------------------------------------------------------
# Prompt builders


def _image_part(frame: Frame) -> ImagePart:
    return ImagePart(frame_id=frame.frame_id, tags=frame.tags)


def _example_parts(criterion: Criterion) -> list:
    parts: list = []
    for i, ex in enumerate(criterion.examples, start=1):
        if ex.kind is ExampleKind.TEXT_NOTE:
            parts.append(TextPart(f"Example note {i}: {ex.text}"))
        else:
            labels = "; ".join(
                f"{a.label} at (x={a.rect[0]:.3f}, y={a.rect[1]:.3f}, w={a.rect[2]:.3f}, h={a.rect[3]:.3f})"
                for a in ex.annotations
            )
            header = f"Example image {i}" + (f" (annotated: {labels})" if labels else "") + ":"
            parts.append(TextPart(header))
            parts.append(ImagePart(frame_id=ex.frame_ref or ""))
    return parts


def build_criterion_prompt(
    criterion: Criterion,
    frames: Sequence[Frame],
    goal: str,
    temperature: float = 0.0,
) -> ModelRequest:
    if not frames:
        raise ValueError("criterion evaluation needs at least one frame")
    parts: list = [
        TextPart(f"Sensing goal: {goal}"),
        TextPart(f"Criterion: {criterion.question}"),
    ]
    parts.extend(_example_parts(criterion))
    parts.append(TextPart(f"Latest {len(frames)} frames, oldest to newest:"))
    parts.extend(_image_part(f) for f in frames)
    return ModelRequest(
        role=ModelRole.CRITERION,
        system_instructions=load_template("criterion_v1"),
        user_parts=tuple(parts),
        temperature=temperature,
        response_schema=ResponseSchema.CRITERION_JUDGMENT,
        template_id="criterion_v1",
    )


def build_verdict_prompt(
    goal: str,
    results: Sequence[CriterionResult],
    titles: dict,
    temperature: float = 0.8,
) -> ModelRequest:
    """One block per result in stable criterion_id order; frames are not
    forwarded to the verdict stage."""
    if not results:
        raise ValueError("verdict prompt needs at least one result")
    parts: list = [TextPart(f"Sensing goal: {goal}")]
    for r in sorted(results, key=lambda r: r.criterion_id):
        title = titles.get(r.criterion_id, r.criterion_id)
        valence = r.valence.value if r.valence else "error"
        parts.append(
            TextPart(f"Criterion: {title}\nValence: {valence}\nDescription: {r.description}")
        )
    return ModelRequest(
        role=ModelRole.REASONING,
        system_instructions=load_template("verdict_v1"),
        user_parts=tuple(parts),
        temperature=temperature,
        response_schema=ResponseSchema.VERDICT_JUDGMENT,
        template_id="verdict_v1",
    )


def build_bootstrap_prompt(
    goal: str, frames: Sequence[Frame], temperature: float = 0.8
) -> ModelRequest:
    """Zero-criteria fallback: one basic prompt derived from the raw goal."""
    parts: list = [
        TextPart(f"Sensing goal: {goal}"),
        TextPart(f"Question: {goal} Answer with 'positive' or 'negative', and provide a brief explanation."),
    ]
    parts.extend(_image_part(f) for f in frames)
    return ModelRequest(
        role=ModelRole.REASONING,
        system_instructions=load_template("bootstrap_v1"),
        user_parts=tuple(parts),
        temperature=temperature,
        response_schema=ResponseSchema.VERDICT_JUDGMENT,
        template_id="bootstrap_v1",
    )


# ---------------------------------------------------------------------------
# Response parsing


_FENCE = re.compile(r"^```[a-zA-Z]*\s*\n?(.*?)\n?```\s*$", re.DOTALL)


def strip_code_fences(raw: str) -> str:
    text = raw.strip()
    m = _FENCE.match(text)
    return m.group(1).strip() if m else text


def _parse_valence(value, raw: str) -> Valence:
    if not isinstance(value, str):
        raise ParseFailure(f"valence must be a string, got {value!r}", raw=raw)
    lowered = value.strip().lower()
    if lowered == "positive":
        return Valence.POSITIVE
    if lowered == "negative":
        return Valence.NEGATIVE
    raise ParseFailure(f"invalid valence {value!r}", raw=raw)


def _require_str(obj: dict, key: str, raw: str) -> str:
    value = obj.get(key)
    if not isinstance(value, str):
        raise ParseFailure(f"missing or non-string field {key!r}", raw=raw)
    return value


def parse_judgment(raw: str, schema: str):
    """Strict structured parse of a model response.

    Failure raises ParseFailure so the caller records an errored result;
    a malformed response is never silently defaulted.
    """
    if not raw or not raw.strip():
        raise ParseFailure("empty model response", raw=raw)
    text = strip_code_fences(raw)
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseFailure(f"malformed JSON: {exc}", raw=raw) from exc

    if schema == ResponseSchema.CRITERION_JUDGMENT:
        if not isinstance(data, dict):
            raise ParseFailure("expected a JSON object", raw=raw)
        return (_parse_valence(data.get("valence"), raw), _require_str(data, "description", raw))

    if schema == ResponseSchema.VERDICT_JUDGMENT:
        if not isinstance(data, dict):
            raise ParseFailure("expected a JSON object", raw=raw)
        return (_parse_valence(data.get("outcome"), raw), _require_str(data, "explanation", raw))

    if schema == ResponseSchema.CRITERIA_LIST:
        if not isinstance(data, list):
            raise ParseFailure("expected a JSON array", raw=raw)
        return [
            {"title": _require_str(c, "title", raw), "question": _require_str(c, "question", raw)}
            for c in data
            if isinstance(c, dict) or _fail_item(raw)
        ]

    if schema == ResponseSchema.DIFF_RESULT:
        if not isinstance(data, dict):
            raise ParseFailure("expected a JSON object", raw=raw)
        drafts = data.get("criteria")
        if not isinstance(drafts, list):
            raise ParseFailure("missing criteria array", raw=raw)
        return {
            "reasoning": _require_str(data, "reasoning", raw),
            "criteria": [
                {
                    "title": _require_str(c, "title", raw),
                    "question": _require_str(c, "question", raw),
                }
                for c in drafts
                if isinstance(c, dict) or _fail_item(raw)
            ],
        }

    if schema == ResponseSchema.TEST_CASE_LIST:
        if not isinstance(data, list):
            raise ParseFailure("expected a JSON array", raw=raw)
        return [
            {
                "scenario": _require_str(c, "scenario", raw),
                "rationale": _require_str(c, "rationale", raw),
            }
            for c in data
            if isinstance(c, dict) or _fail_item(raw)
        ]

    if schema == ResponseSchema.TITLE_ONLY:
        if not isinstance(data, dict):
            raise ParseFailure("expected a JSON object", raw=raw)
        return _require_str(data, "title", raw)

    raise ParseFailure(f"unknown response schema {schema!r}", raw=raw)


def _fail_item(raw: str):
    raise ParseFailure("array item is not a JSON object", raw=raw)


# ---------------------------------------------------------------------------
# Backends


class Backend:
    model_id: str = "backend"

    async def complete(self, request: ModelRequest) -> str:
        raise NotImplementedError


class ScriptedBackend(Backend):
    """Fixture table keyed by request fingerprint; the workhorse of every
    deterministic pipeline test."""

    model_id = "scripted"

    def __init__(self, fixtures: Optional[dict] = None):
        self.fixtures = dict(fixtures or {})

    @classmethod
    def from_file(cls, path: str) -> "ScriptedBackend":
        with open(path, "r", encoding="utf-8") as fh:
            return cls(json.load(fh))

    def add(self, request: ModelRequest, response: str) -> None:
        self.fixtures[fingerprint(request)] = response

    async def complete(self, request: ModelRequest) -> str:
        fp = fingerprint(request)
        if fp not in self.fixtures:
            raise FixtureMissing(f"no fixture for fingerprint {fp}")
        return self.fixtures[fp]


@dataclass(frozen=True)
class OracleRule:
    question_substring: str
    tag: str
    negate: bool = False


class RuleOracleBackend(Backend):
    """Derives valences from boolean predicates over synthetic frame tags.

    A rule fires when its question_substring occurs in the request's text;
    the predicate is the union of the window's frame tags at the rule's tag
    (inverted when negate is set), and a true predicate means "issue
    present", hence a negative valence.
    """

    model_id = "rule-oracle"

    def __init__(self, rules: Sequence[OracleRule]):
        self.rules = tuple(rules)

    @classmethod
    def from_file(cls, path: str) -> "RuleOracleBackend":
        with open(path, "r", encoding="utf-8") as fh:
            entries = json.load(fh)
        return cls(
            [
                OracleRule(
                    question_substring=e["question_substring"],
                    tag=e["tag"],
                    negate=bool(e.get("negate", False)),
                )
                for e in entries
            ]
        )

    async def complete(self, request: ModelRequest) -> str:
        text = request.text_content()
        if request.response_schema == ResponseSchema.CRITERION_JUDGMENT:
            tags: dict = {}
            for part in request.user_parts:
                if isinstance(part, ImagePart):
                    for k, v in part.tags:
                        tags[k] = tags.get(k, False) or v
            for rule in self.rules:
                if rule.question_substring.lower() in text.lower():
                    fired = bool(tags.get(rule.tag, False)) != rule.negate
                    valence = "negative" if fired else "positive"
                    trace = (
                        f"rule '{rule.question_substring}' -> tag '{rule.tag}'"
                        f"={tags.get(rule.tag, False)} negate={rule.negate}"
                    )
                    return json.dumps({"description": trace, "valence": valence})
            return json.dumps({"description": "no rule matched", "valence": "positive"})
        if request.response_schema == ResponseSchema.VERDICT_JUDGMENT:
            negative = "valence: negative" in text.lower()
            return json.dumps(
                {
                    "outcome": "negative" if negative else "positive",
                    "explanation": "at least one criterion reported an issue"
                    if negative
                    else "no criterion reported an issue",
                }
            )
        raise BackendError(400, f"rule oracle does not support schema {request.response_schema}")


class RemoteBackend(Backend):
    """One HTTP call per request against a 'send parts, get text' endpoint.

    API key comes from an environment variable only. One retry on timeout;
    parse failures are never retried (they are model behavior, surfaced to
    the user).
    """

    def __init__(
        self,
        endpoint: str,
        model_ids: Optional[dict] = None,
        api_key_env: str = "SENSORFORGE_API_KEY",
        timeout: float = 30.0,
        max_in_flight: int = 8,
    ):
        self.endpoint = endpoint
        self.model_ids = model_ids or {
            ModelRole.CRITERION: "fast-tier",
            ModelRole.REASONING: "reasoning-tier",
        }
        self.api_key_env = api_key_env
        self.timeout = timeout
        self._limiter = asyncio.Semaphore(max_in_flight)
        self.model_id = "remote"

    def _payload(self, request: ModelRequest) -> dict:
        return {
            "model": self.model_ids.get(request.role, request.role),
            "temperature": request.temperature,
            "system": request.system_instructions,
            "parts": [
                {"text": p.text} if isinstance(p, TextPart) else {"image_ref": p.frame_id}
                for p in request.user_parts
            ],
        }

    async def complete(self, request: ModelRequest) -> str:
        headers = {}
        key = os.environ.get(self.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        payload = self._payload(request)
        async with self._limiter:
            for attempt in (0, 1):
                try:
                    async with httpx.AsyncClient(timeout=self.timeout) as client:
                        resp = await client.post(self.endpoint, json=payload, headers=headers)
                except httpx.TimeoutException as exc:
                    if attempt == 0:
                        continue
                    raise BackendTimeout(str(exc)) from exc
                if resp.status_code != 200:
                    raise BackendError(resp.status_code, resp.text)
                body = resp.json()
                if "text" not in body:
                    raise BackendError(502, "response body missing 'text'")
                return body["text"]
        raise BackendTimeout("unreachable")  # pragma: no cover


async def invoke(backend: Backend, request: ModelRequest, clock: Optional[Clock] = None) -> ModelResponse:
    """Run one request and parse it against its declared schema."""
    clock = clock or RealClock()
    started = clock.now()
    raw = await backend.complete(request)
    latency_ms = int((clock.now() - started) * 1000)
    parsed = parse_judgment(raw, request.response_schema)
    return ModelResponse(
        raw_text=raw, parsed=parsed, model_id=backend.model_id, latency_ms=latency_ms
    )
