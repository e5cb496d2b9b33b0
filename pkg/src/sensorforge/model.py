"""Shared domain types, identifiers, and canonical serialization.

Every other module trades in these immutable value objects. The only wire
and persistence representation is canonical JSON: sorted keys, compact
separators, UTF-8.
"""

from __future__ import annotations

import json
import random
import threading
import time
from dataclasses import dataclass, field, fields, is_dataclass, replace
from enum import Enum
from typing import Any, Optional


class Valence(str, Enum):
    """Binary outcome of a check. Positive = no issue, Negative = issue."""

    POSITIVE = "positive"
    NEGATIVE = "negative"


class VerdictMode(str, Enum):
    MODEL = "model"
    ALL_OF = "all_of"
    ANY_OF = "any_of"


class Provenance(str, Enum):
    MANUAL = "manual"
    GENERATED = "generated"
    EXAMPLES_DIFF = "examples_diff"


class ExampleKind(str, Enum):
    TEXT_NOTE = "text_note"
    IMAGE = "image"


class FrameEncoding(str, Enum):
    PNG = "png"
    JPEG = "jpeg"


TITLE_MAX_CHARS = 32

DEFAULT_CRITERION_TEMPERATURE = 0.0
DEFAULT_REASONING_TEMPERATURE = 0.8


# ---------------------------------------------------------------------------
# Identifiers


_ID_ALPHABET = "0123456789ABCDEFGHJKMNPQRSTVWXYZ"  # Crockford base32


def _encode_base32(value: int, length: int) -> str:
    chars = []
    for _ in range(length):
        chars.append(_ID_ALPHABET[value & 0x1F])
        value >>= 5
    return "".join(reversed(chars))


class IdGenerator:
    """Produces unique ids that sort lexicographically by creation time.

    Layout is ULID-like: 48-bit millisecond timestamp (10 chars) followed by
    80 bits of randomness (16 chars). Ids generated within the same
    millisecond stay strictly increasing by bumping the random tail.

    A deterministic generator (fixed clock + seeded rng) yields reproducible
    ids, which the CLI relies on for byte-identical replay output.
    """

    def __init__(self, now_ms=None, rng: Optional[random.Random] = None):
        self._now_ms = now_ms or (lambda: time.time_ns() // 1_000_000)
        self._rng = rng or random.Random()
        self._lock = threading.Lock()
        self._last_ms = -1
        self._last_rand = 0

    def __call__(self) -> str:
        with self._lock:
            ms = int(self._now_ms())
            if ms <= self._last_ms:
                ms = self._last_ms
                rand = self._last_rand + 1
            else:
                rand = self._rng.getrandbits(80)
            self._last_ms = ms
            self._last_rand = rand
            return _encode_base32(ms, 10) + _encode_base32(rand, 16)


new_id = IdGenerator()


# ---------------------------------------------------------------------------
# Domain types


@dataclass(frozen=True)
class RoleConfig:
    """Model identifier plus sampling temperature for one pipeline role."""

    model_id: str
    temperature: float

    def __post_init__(self):
        if not 0.0 <= self.temperature <= 1.0:
            raise ValueError("temperature must lie in [0, 1]")


@dataclass(frozen=True)
class ModelConfig:
    criterion_role: RoleConfig = RoleConfig("fast-tier", DEFAULT_CRITERION_TEMPERATURE)
    verdict_role: RoleConfig = RoleConfig("reasoning-tier", DEFAULT_REASONING_TEMPERATURE)


@dataclass(frozen=True)
class Smoothing:
    """k-of-n majority denoising over recent verdict outcomes."""

    window_k: int
    threshold_m: int

    def __post_init__(self):
        if not 1 <= self.threshold_m <= self.window_k:
            raise ValueError("smoothing requires 1 <= threshold_m <= window_k")


@dataclass(frozen=True)
class SensorSpec:
    sensor_id: str
    goal: str
    interval: float = 3.0
    window_size: int = 3
    capture_rate: float = 1.0
    verdict_mode: VerdictMode = VerdictMode.MODEL
    smoothing: Optional[Smoothing] = None
    model_config: ModelConfig = field(default_factory=ModelConfig)
    active: bool = False

    def __post_init__(self):
        if self.interval <= 0:
            raise ValueError("interval must be > 0")
        if self.window_size < 1:
            raise ValueError("window_size must be >= 1")
        if self.capture_rate <= 0:
            raise ValueError("capture_rate must be > 0")


@dataclass(frozen=True)
class Annotation:
    """Labelled rectangle over an image example, normalized to [0, 1]."""

    rect: tuple  # (x, y, w, h)
    label: str

    def __post_init__(self):
        if len(self.rect) != 4 or not all(0.0 <= v <= 1.0 for v in self.rect):
            raise ValueError("annotation rect coordinates must lie in [0, 1]")
        object.__setattr__(self, "rect", tuple(float(v) for v in self.rect))


@dataclass(frozen=True)
class ExampleAttachment:
    kind: ExampleKind
    text: Optional[str] = None
    frame_ref: Optional[str] = None
    annotations: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "annotations", tuple(self.annotations))
        if self.kind is ExampleKind.TEXT_NOTE:
            if not self.text or self.frame_ref is not None or self.annotations:
                raise ValueError("text note needs text and carries no image data")
        else:
            if not self.frame_ref:
                raise ValueError("image example needs a frame_ref")


@dataclass(frozen=True)
class Criterion:
    criterion_id: str
    sensor_id: str
    title: str
    question: str
    examples: tuple = ()
    enabled: bool = True
    provenance: Provenance = Provenance.MANUAL
    created_at: int = 0
    updated_at: int = 0

    def __post_init__(self):
        object.__setattr__(self, "examples", tuple(self.examples))
        if not self.question.strip():
            raise ValueError("criterion question must be non-empty")
        if not self.title.strip():
            raise ValueError("criterion title must be non-empty")
        if len(self.title) > TITLE_MAX_CHARS:
            raise ValueError(f"criterion title exceeds {TITLE_MAX_CHARS} chars")


@dataclass(frozen=True)
class Frame:
    frame_id: str  # content hash of the encoded bytes
    captured_at: int  # ms timestamp
    source_id: str
    encoding: FrameEncoding
    tags: tuple = ()  # sorted (name, bool) pairs; synthetic scene metadata

    def __post_init__(self):
        object.__setattr__(
            self, "tags", tuple(sorted((str(k), bool(v)) for k, v in dict(self.tags).items()))
        )

    @property
    def tag_map(self) -> dict:
        return dict(self.tags)


@dataclass(frozen=True)
class CriterionResult:
    criterion_id: str
    run_id: str
    valence: Optional[Valence]
    description: str
    model_id: str
    latency_ms: int
    raw: str
    error: Optional[str] = None

    def __post_init__(self):
        if self.error is None:
            if self.valence is None:
                raise ValueError("successful result needs a valence")
            if not self.description:
                raise ValueError("successful result needs a description")
        elif self.valence is not None:
            raise ValueError("errored result must not carry a valence")

    @property
    def ok(self) -> bool:
        return self.error is None


@dataclass(frozen=True)
class Verdict:
    run_id: str
    outcome: Optional[Valence]
    explanation: str
    mode_used: VerdictMode
    contributing: tuple = ()  # criterion_ids considered, in id order
    smoothed_outcome: Optional[Valence] = None
    error: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "contributing", tuple(self.contributing))
        if self.error is None and self.outcome is None:
            raise ValueError("verdict needs an outcome unless errored")


@dataclass(frozen=True)
class SensorRun:
    run_id: str
    sensor_id: str
    ticked_at: int
    frame_ids: tuple = ()
    results: tuple = ()
    verdict: Optional[Verdict] = None
    skipped: bool = False
    criteria_snapshot: str = ""

    def __post_init__(self):
        object.__setattr__(self, "frame_ids", tuple(self.frame_ids))
        object.__setattr__(self, "results", tuple(self.results))
        if self.skipped and (self.results or self.verdict is not None):
            raise ValueError("skipped run carries no results or verdict")


@dataclass(frozen=True)
class TestSuggestion:
    criterion_id: str
    scenario: str
    rationale: str


# ---------------------------------------------------------------------------
# Canonical serialization


def _to_jsonable(value: Any) -> Any:
    if isinstance(value, Enum):
        return value.value
    if is_dataclass(value) and not isinstance(value, type):
        return {f.name: _to_jsonable(getattr(value, f.name)) for f in fields(value)}
    if isinstance(value, (list, tuple)):
        return [_to_jsonable(v) for v in value]
    if isinstance(value, dict):
        return {str(k): _to_jsonable(v) for k, v in value.items()}
    return value


def canonical_json(entity: Any) -> bytes:
    """Deterministic encoding: sorted keys, compact, UTF-8."""

    return json.dumps(
        _to_jsonable(entity), sort_keys=True, separators=(",", ":"), ensure_ascii=False
    ).encode("utf-8")


def _opt(fn, value):
    return None if value is None else fn(value)


def role_config_from_dict(d: dict) -> RoleConfig:
    return RoleConfig(model_id=d["model_id"], temperature=float(d["temperature"]))


def model_config_from_dict(d: dict) -> ModelConfig:
    return ModelConfig(
        criterion_role=role_config_from_dict(d["criterion_role"]),
        verdict_role=role_config_from_dict(d["verdict_role"]),
    )


def smoothing_from_dict(d: dict) -> Smoothing:
    return Smoothing(window_k=int(d["window_k"]), threshold_m=int(d["threshold_m"]))


def sensor_spec_from_dict(d: dict) -> SensorSpec:
    return SensorSpec(
        sensor_id=d["sensor_id"],
        goal=d["goal"],
        interval=float(d["interval"]),
        window_size=int(d["window_size"]),
        capture_rate=float(d["capture_rate"]),
        verdict_mode=VerdictMode(d["verdict_mode"]),
        smoothing=_opt(smoothing_from_dict, d.get("smoothing")),
        model_config=model_config_from_dict(d["model_config"]),
        active=bool(d["active"]),
    )


def annotation_from_dict(d: dict) -> Annotation:
    return Annotation(rect=tuple(d["rect"]), label=d["label"])


def example_from_dict(d: dict) -> ExampleAttachment:
    return ExampleAttachment(
        kind=ExampleKind(d["kind"]),
        text=d.get("text"),
        frame_ref=d.get("frame_ref"),
        annotations=tuple(annotation_from_dict(a) for a in d.get("annotations") or ()),
    )


def criterion_from_dict(d: dict) -> Criterion:
    return Criterion(
        criterion_id=d["criterion_id"],
        sensor_id=d["sensor_id"],
        title=d["title"],
        question=d["question"],
        examples=tuple(example_from_dict(e) for e in d.get("examples") or ()),
        enabled=bool(d["enabled"]),
        provenance=Provenance(d["provenance"]),
        created_at=int(d["created_at"]),
        updated_at=int(d["updated_at"]),
    )


def frame_from_dict(d: dict) -> Frame:
    return Frame(
        frame_id=d["frame_id"],
        captured_at=int(d["captured_at"]),
        source_id=d["source_id"],
        encoding=FrameEncoding(d["encoding"]),
        tags=tuple((k, bool(v)) for k, v in d.get("tags") or ()),
    )


def criterion_result_from_dict(d: dict) -> CriterionResult:
    return CriterionResult(
        criterion_id=d["criterion_id"],
        run_id=d["run_id"],
        valence=_opt(Valence, d.get("valence")),
        description=d["description"],
        model_id=d["model_id"],
        latency_ms=int(d["latency_ms"]),
        raw=d["raw"],
        error=d.get("error"),
    )


def verdict_from_dict(d: dict) -> Verdict:
    return Verdict(
        run_id=d["run_id"],
        outcome=_opt(Valence, d.get("outcome")),
        explanation=d["explanation"],
        mode_used=VerdictMode(d["mode_used"]),
        contributing=tuple(d.get("contributing") or ()),
        smoothed_outcome=_opt(Valence, d.get("smoothed_outcome")),
        error=d.get("error"),
    )


def sensor_run_from_dict(d: dict) -> SensorRun:
    return SensorRun(
        run_id=d["run_id"],
        sensor_id=d["sensor_id"],
        ticked_at=int(d["ticked_at"]),
        frame_ids=tuple(d.get("frame_ids") or ()),
        results=tuple(criterion_result_from_dict(r) for r in d.get("results") or ()),
        verdict=_opt(verdict_from_dict, d.get("verdict")),
        skipped=bool(d["skipped"]),
        criteria_snapshot=d.get("criteria_snapshot", ""),
    )


def test_suggestion_from_dict(d: dict) -> TestSuggestion:
    return TestSuggestion(
        criterion_id=d["criterion_id"], scenario=d["scenario"], rationale=d["rationale"]
    )


DECODERS = {
    SensorSpec: sensor_spec_from_dict,
    Criterion: criterion_from_dict,
    ExampleAttachment: example_from_dict,
    Frame: frame_from_dict,
    CriterionResult: criterion_result_from_dict,
    Verdict: verdict_from_dict,
    SensorRun: sensor_run_from_dict,
    TestSuggestion: test_suggestion_from_dict,
    Smoothing: smoothing_from_dict,
    ModelConfig: model_config_from_dict,
    RoleConfig: role_config_from_dict,
}


def decode(cls, data: bytes):
    return DECODERS[cls](json.loads(data.decode("utf-8")))


__all__ = [
    "Valence",
    "VerdictMode",
    "Provenance",
    "ExampleKind",
    "FrameEncoding",
    "RoleConfig",
    "ModelConfig",
    "Smoothing",
    "SensorSpec",
    "Annotation",
    "ExampleAttachment",
    "Criterion",
    "Frame",
    "CriterionResult",
    "Verdict",
    "SensorRun",
    "TestSuggestion",
    "IdGenerator",
    "new_id",
    "canonical_json",
    "decode",
    "replace",
    "TITLE_MAX_CHARS",
]
