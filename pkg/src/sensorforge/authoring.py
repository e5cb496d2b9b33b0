"""Model-assisted criteria authoring: bounded generation, title naming,
examples-diff, and test-case suggestions.

Distinctness of generated drafts is enforced here, not trusted to the
model: candidates whose normalized title or question collides with an
existing criterion are dropped, with one regeneration retry to refill.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Optional, Sequence

from .clock import Clock
from .errors import FrameMissing
from .gateway import (
    Backend,
    ImagePart,
    ModelRequest,
    ModelRole,
    ResponseSchema,
    TextPart,
    invoke,
    load_template,
)
from .model import (
    TITLE_MAX_CHARS,
    Criterion,
    Provenance,
    TestSuggestion,
    new_id,
)

MAX_GENERATED_PER_TURN = 4
MAX_DIFF_FRAMES = 8
SUGGESTIONS_PER_REQUEST = 2

_PUNCT = re.compile(r"[^\w\s]", re.UNICODE)
_WS = re.compile(r"\s+")


def normalize(text: str) -> str:
    """Lowercase, punctuation-stripped, whitespace-collapsed; idempotent."""
    return _WS.sub(" ", _PUNCT.sub("", text.lower())).strip()


def _existing_keys(existing: Sequence[Criterion]) -> set:
    keys = set()
    for c in existing:
        keys.add(normalize(c.title))
        keys.add(normalize(c.question))
    return keys


def _distinct(candidates: Sequence[dict], taken: set) -> list:
    kept = []
    for cand in candidates:
        t, q = normalize(cand["title"]), normalize(cand["question"])
        if not t or not q or t in taken or q in taken:
            continue
        kept.append(cand)
        taken.add(t)
        taken.add(q)
    return kept


def _draft(sensor_id: str, cand: dict, provenance: Provenance, now_ms: int, id_gen) -> Criterion:
    return Criterion(
        criterion_id=id_gen(),
        sensor_id=sensor_id,
        title=cand["title"][:TITLE_MAX_CHARS],
        question=cand["question"],
        enabled=False,
        provenance=provenance,
        created_at=now_ms,
        updated_at=now_ms,
    )


@dataclass(frozen=True)
class DiffCategory:
    label: str
    frame_refs: tuple

    def __post_init__(self):
        object.__setattr__(self, "frame_refs", tuple(self.frame_refs))
        if not self.frame_refs:
            raise ValueError("diff category needs at least one frame")
        if len(self.frame_refs) > MAX_DIFF_FRAMES:
            raise ValueError(f"diff category capped at {MAX_DIFF_FRAMES} frames")


@dataclass(frozen=True)
class DiffResult:
    reasoning: str
    proposed: tuple  # Criterion drafts, provenance=ExamplesDiff, disabled


def default_diff_labels(goal: str) -> tuple:
    """Suggested binary category labels for a yes/no sensing goal."""
    topic = goal.strip().rstrip("?")
    for prefix in ("is my ", "is the ", "is there ", "is "):
        if topic.lower().startswith(prefix):
            topic = topic[len(prefix):]
            break
    topic = topic.strip().capitalize()
    return (topic or "Positive case", f"Not: {topic}" if topic else "Negative case")


def _gen_request(goal: str, frames, existing: Sequence[Criterion], temperature: float) -> ModelRequest:
    parts: list = [TextPart(f"Sensing goal: {goal}")]
    if existing:
        listing = "\n".join(f"- {c.title}: {c.question}" for c in existing)
        parts.append(TextPart(f"Existing criteria:\n{listing}"))
    else:
        parts.append(TextPart("Existing criteria: none"))
    parts.extend(ImagePart(frame_id=f.frame_id, tags=f.tags) for f in frames)
    return ModelRequest(
        role=ModelRole.REASONING,
        system_instructions=load_template("criteria_gen_v1"),
        user_parts=tuple(parts),
        temperature=temperature,
        response_schema=ResponseSchema.CRITERIA_LIST,
        template_id="criteria_gen_v1",
    )


async def generate_criteria(
    goal: str,
    frames,
    existing: Sequence[Criterion],
    gateway: Backend,
    sensor_id: str,
    temperature: float = 0.8,
    now_ms: int = 0,
    id_gen=new_id,
    clock: Optional[Clock] = None,
) -> list:
    """At most 4 disabled drafts, none colliding with existing criteria."""
    if not goal.strip():
        raise ValueError("criteria generation needs a non-empty goal")
    taken = _existing_keys(existing)
    request = _gen_request(goal, frames, existing, temperature)
    response = await invoke(gateway, request, clock=clock)
    kept = _distinct(response.parsed, taken)[:MAX_GENERATED_PER_TURN]
    if len(kept) < MAX_GENERATED_PER_TURN:
        # one retry to refill after dedup; the prompt now names the kept
        # drafts as existing so the model steers away from them
        augmented = list(existing) + [
            _draft(sensor_id, c, Provenance.GENERATED, now_ms, id_gen) for c in kept
        ]
        retry = _gen_request(goal, frames, augmented, temperature)
        try:
            response = await invoke(gateway, retry, clock=clock)
        except Exception:
            response = None
        if response is not None:
            kept.extend(
                _distinct(response.parsed, taken)[: MAX_GENERATED_PER_TURN - len(kept)]
            )
    return [_draft(sensor_id, c, Provenance.GENERATED, now_ms, id_gen) for c in kept]


def fallback_title(question: str) -> str:
    """First 4 content words of the question, title-cased."""
    words = [w for w in re.findall(r"[\w']+", question)][:4]
    return " ".join(w.capitalize() for w in words)[:TITLE_MAX_CHARS] or "Untitled"


async def generate_title(
    question: str, gateway: Backend, temperature: float = 0.8, clock: Optional[Clock] = None
) -> str:
    """Concise display name, capped at 32 chars; never fails (falls back to
    the question's leading words on any model trouble)."""
    if not question.strip():
        raise ValueError("title generation needs a non-empty question")
    request = ModelRequest(
        role=ModelRole.REASONING,
        system_instructions=load_template("title_v1"),
        user_parts=(TextPart(f"Question: {question}"),),
        temperature=temperature,
        response_schema=ResponseSchema.TITLE_ONLY,
        template_id="title_v1",
    )
    try:
        response = await invoke(gateway, request, clock=clock)
        title = response.parsed.strip()[:TITLE_MAX_CHARS]
        if title:
            return title
    except Exception:
        pass
    return fallback_title(question)


async def examples_diff(
    goal: str,
    categories: Sequence[DiffCategory],
    existing: Sequence[Criterion],
    gateway: Backend,
    frame_store,
    sensor_id: str,
    temperature: float = 0.8,
    now_ms: int = 0,
    id_gen=new_id,
    clock: Optional[Clock] = None,
) -> DiffResult:
    """Binary examples-diff: two labeled frame groups in, reasoning plus
    deduplicated criterion drafts out."""
    if len(categories) != 2:
        raise ValueError("examples-diff takes exactly 2 categories")
    parts: list = [TextPart(f"Sensing goal: {goal}")]
    if existing:
        listing = "\n".join(f"- {c.title}: {c.question}" for c in existing)
        parts.append(TextPart(f"Existing criteria:\n{listing}"))
    else:
        parts.append(TextPart("Existing criteria: none"))
    for cat in categories:
        parts.append(TextPart(f"Category: {cat.label}"))
        for ref in cat.frame_refs:
            if not frame_store.has_frame(ref):
                raise FrameMissing(ref)
            parts.append(ImagePart(frame_id=ref))
    request = ModelRequest(
        role=ModelRole.REASONING,
        system_instructions=load_template("examples_diff_v1"),
        user_parts=tuple(parts),
        temperature=temperature,
        response_schema=ResponseSchema.DIFF_RESULT,
        template_id="examples_diff_v1",
    )
    response = await invoke(gateway, request, clock=clock)
    taken = _existing_keys(existing)
    kept = _distinct(response.parsed["criteria"], taken)
    drafts = tuple(
        _draft(sensor_id, c, Provenance.EXAMPLES_DIFF, now_ms, id_gen) for c in kept
    )
    return DiffResult(reasoning=response.parsed["reasoning"], proposed=drafts)


async def generate_test_cases(
    criterion: Criterion,
    goal: str,
    gateway: Backend,
    avoid: Sequence[TestSuggestion] = (),
    temperature: float = 0.8,
    clock: Optional[Clock] = None,
) -> list:
    """Exactly 2 suggestions; regeneration steers clear of the scenarios
    already attached to the criterion."""
    parts: list = [
        TextPart(f"Sensing goal: {goal}"),
        TextPart(f"Criterion: {criterion.title}\nQuestion: {criterion.question}"),
    ]
    if avoid:
        listing = "\n".join(f"- {s.scenario}" for s in avoid)
        parts.append(TextPart(f"Already suggested (propose different scenarios):\n{listing}"))
    request = ModelRequest(
        role=ModelRole.REASONING,
        system_instructions=load_template("test_cases_v1"),
        user_parts=tuple(parts),
        temperature=temperature,
        response_schema=ResponseSchema.TEST_CASE_LIST,
        template_id="test_cases_v1",
    )
    response = await invoke(gateway, request, clock=clock)
    seen = {normalize(s.scenario) for s in avoid}
    suggestions = []
    for item in response.parsed:
        if normalize(item["scenario"]) in seen:
            continue
        seen.add(normalize(item["scenario"]))
        suggestions.append(
            TestSuggestion(
                criterion_id=criterion.criterion_id,
                scenario=item["scenario"],
                rationale=item["rationale"],
            )
        )
        if len(suggestions) == SUGGESTIONS_PER_REQUEST:
            break
    return suggestions
