"""Final per-tick verdict: boolean aggregation, model aggregation, and
k-of-n majority smoothing."""

from __future__ import annotations

from typing import Optional, Sequence

from .clock import Clock
from .errors import EmptyResults
from .gateway import Backend, build_verdict_prompt, invoke
from .model import CriterionResult, Valence, Verdict, VerdictMode


def _boolean_outcome(mode: VerdictMode, valences: Sequence[Valence]) -> Valence:
    if mode is VerdictMode.ALL_OF:
        return (
            Valence.POSITIVE
            if all(v is Valence.POSITIVE for v in valences)
            else Valence.NEGATIVE
        )
    return (
        Valence.POSITIVE if any(v is Valence.POSITIVE for v in valences) else Valence.NEGATIVE
    )


def _boolean_explanation(
    mode: VerdictMode, ok: Sequence[CriterionResult], errored: Sequence[CriterionResult], titles: dict
) -> str:
    failing = [titles.get(r.criterion_id, r.criterion_id) for r in ok if r.valence is Valence.NEGATIVE]
    parts = []
    if failing:
        parts.append("failing criteria: " + ", ".join(sorted(failing)))
    else:
        parts.append("all criteria passed")
    if errored:
        names = sorted(titles.get(r.criterion_id, r.criterion_id) for r in errored)
        parts.append("errored (excluded): " + ", ".join(names))
    return "; ".join(parts)


async def aggregate(
    results: Sequence[CriterionResult],
    mode: VerdictMode,
    goal: str,
    gateway: Optional[Backend] = None,
    titles: Optional[dict] = None,
    run_id: str = "",
    temperature: float = 0.8,
    clock: Optional[Clock] = None,
) -> Verdict:
    """Converge criterion results into one verdict.

    Boolean modes are computed locally over the ok results; errored results
    are excluded and named in the explanation (an unknown never masquerades
    as a pass or fail). ModelVerdict sends the ok results to the reasoning
    tier; its errors propagate to the caller.
    """
    titles = titles or {}
    results = sorted(results, key=lambda r: r.criterion_id)
    ok = [r for r in results if r.ok]
    errored = [r for r in results if not r.ok]
    contributing = tuple(r.criterion_id for r in results)
    if not ok:
        raise EmptyResults("no successful criterion results to aggregate")

    if mode in (VerdictMode.ALL_OF, VerdictMode.ANY_OF):
        outcome = _boolean_outcome(mode, [r.valence for r in ok])
        return Verdict(
            run_id=run_id,
            outcome=outcome,
            explanation=_boolean_explanation(mode, ok, errored, titles),
            mode_used=mode,
            contributing=contributing,
        )

    if gateway is None:
        raise ValueError("model verdict mode requires a gateway backend")
    request = build_verdict_prompt(goal, ok, titles, temperature=temperature)
    response = await invoke(gateway, request, clock=clock)
    outcome, explanation = response.parsed
    if errored:
        names = sorted(titles.get(r.criterion_id, r.criterion_id) for r in errored)
        explanation += " [errored criteria excluded: " + ", ".join(names) + "]"
    return Verdict(
        run_id=run_id,
        outcome=outcome,
        explanation=explanation,
        mode_used=VerdictMode.MODEL,
        contributing=contributing,
    )


def smooth(history: Sequence[Valence], threshold_m: int, window_k: Optional[int] = None) -> Valence:
    """k-of-n majority over the most recent outcomes, oldest first.

    Negative wins when at least threshold_m of the considered outcomes are
    Negative: ties lean toward alerting. A history shorter than window_k is
    padded with its latest outcome.
    """
    if not history:
        raise ValueError("smoothing needs at least one outcome")
    window_k = window_k if window_k is not None else len(history)
    if not 1 <= threshold_m <= window_k:
        raise ValueError("smoothing requires 1 <= threshold_m <= window_k")
    considered = list(history[-window_k:])
    while len(considered) < window_k:
        considered.append(history[-1])
    negatives = sum(1 for v in considered if v is Valence.NEGATIVE)
    return Valence.NEGATIVE if negatives >= threshold_m else Valence.POSITIVE
