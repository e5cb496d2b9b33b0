"""Sensor runtime: tick scheduling, criterion fan-out, verdict, emission.

One scheduler loop per active sensor. At every interval boundary it
snapshots the frame window and the enabled criteria, fans the criteria out
to the gateway concurrently, joins all results (a failed criterion becomes
an errored result, never a failed tick), aggregates the verdict, persists
the run, and emits it.

Overlapping ticks are never queued: if the previous tick is still in
flight at a boundary, a skipped run is recorded instead. Runs are emitted
in strictly increasing run_id order, so skips that pile up behind a slow
tick are held back until that tick lands.
"""

from __future__ import annotations

import asyncio
from collections import deque
from dataclasses import dataclass
from typing import AsyncIterator, Callable, Optional, Sequence

from .capture import FrameWindow
from .clock import Clock
from .errors import (
    BackendError,
    BackendTimeout,
    EmptyResults,
    EmptyWindow,
    FixtureMissing,
    ParseFailure,
)
from .gateway import (
    Backend,
    ResponseSchema,
    build_bootstrap_prompt,
    build_criterion_prompt,
    invoke,
    parse_judgment,
)
from .model import (
    Criterion,
    CriterionResult,
    SensorRun,
    SensorSpec,
    Verdict,
    VerdictMode,
    new_id,
    replace,
)
from .store import Store
from .verdict import aggregate, smooth

_BACKEND_FAILURES = (BackendTimeout, BackendError, FixtureMissing)


@dataclass(frozen=True)
class TickPlan:
    """Immutable snapshot taken at tick start; later edits to criteria or
    spec never touch an in-flight tick."""

    run_id: str
    spec: SensorSpec
    frames: tuple
    criteria: tuple  # enabled criteria only, in criterion_id order
    snapshot_hash: str
    started_at: int


async def evaluate_criterion(
    criterion: Criterion,
    frames: Sequence,
    goal: str,
    backend: Backend,
    temperature: float = 0.0,
    clock: Optional[Clock] = None,
    run_id: str = "",
) -> CriterionResult:
    """One criterion against one frame window; failures come back as an
    errored result carrying whatever raw text we have."""
    if not frames:
        raise ValueError("evaluate_criterion needs at least one frame")
    request = build_criterion_prompt(criterion, frames, goal, temperature=temperature)
    started = clock.now() if clock else 0.0
    try:
        raw = await backend.complete(request)
    except _BACKEND_FAILURES as exc:
        return CriterionResult(
            criterion_id=criterion.criterion_id,
            run_id=run_id,
            valence=None,
            description="",
            model_id=backend.model_id,
            latency_ms=0,
            raw="",
            error=f"{type(exc).__name__}: {exc}",
        )
    latency_ms = int(((clock.now() - started) if clock else 0.0) * 1000)
    try:
        valence, description = parse_judgment(raw, ResponseSchema.CRITERION_JUDGMENT)
    except ParseFailure as exc:
        return CriterionResult(
            criterion_id=criterion.criterion_id,
            run_id=run_id,
            valence=None,
            description="",
            model_id=backend.model_id,
            latency_ms=latency_ms,
            raw=raw,
            error=f"ParseFailure: {exc}",
        )
    return CriterionResult(
        criterion_id=criterion.criterion_id,
        run_id=run_id,
        valence=valence,
        description=description,
        model_id=backend.model_id,
        latency_ms=latency_ms,
        raw=raw,
    )


async def zero_criteria_fallback(
    goal: str,
    frames: Sequence,
    backend: Backend,
    spec: SensorSpec,
    run_id: str = "",
    clock: Optional[Clock] = None,
) -> Verdict:
    """Bootstrap prompt straight from the goal when no criteria exist yet."""
    request = build_bootstrap_prompt(
        goal, frames, temperature=spec.model_config.verdict_role.temperature
    )
    response = await invoke(backend, request, clock=clock)
    outcome, explanation = response.parsed
    return Verdict(
        run_id=run_id,
        outcome=outcome,
        explanation=explanation,
        mode_used=VerdictMode.MODEL,
        contributing=(),
    )


async def execute_tick(
    plan: TickPlan,
    backend: Backend,
    clock: Clock,
    outcome_history: Optional[deque] = None,
) -> SensorRun:
    spec = plan.spec
    results: tuple = ()
    if not plan.criteria:
        try:
            verdict = await zero_criteria_fallback(
                spec.goal, plan.frames, backend, spec, run_id=plan.run_id, clock=clock
            )
        except (*_BACKEND_FAILURES, ParseFailure) as exc:
            verdict = Verdict(
                run_id=plan.run_id,
                outcome=None,
                explanation="",
                mode_used=VerdictMode.MODEL,
                error=f"{type(exc).__name__}: {exc}",
            )
    else:
        temperature = spec.model_config.criterion_role.temperature
        results = tuple(
            await asyncio.gather(
                *(
                    evaluate_criterion(
                        c,
                        plan.frames,
                        spec.goal,
                        backend,
                        temperature=temperature,
                        clock=clock,
                        run_id=plan.run_id,
                    )
                    for c in plan.criteria
                )
            )
        )
        titles = {c.criterion_id: c.title for c in plan.criteria}
        try:
            verdict = await aggregate(
                results,
                spec.verdict_mode,
                spec.goal,
                gateway=backend,
                titles=titles,
                run_id=plan.run_id,
                temperature=spec.model_config.verdict_role.temperature,
                clock=clock,
            )
        except EmptyResults:
            verdict = Verdict(
                run_id=plan.run_id,
                outcome=None,
                explanation="",
                mode_used=spec.verdict_mode,
                contributing=tuple(r.criterion_id for r in results),
                error="all criteria failed",
            )
        except (*_BACKEND_FAILURES, ParseFailure) as exc:
            verdict = Verdict(
                run_id=plan.run_id,
                outcome=None,
                explanation="",
                mode_used=spec.verdict_mode,
                contributing=tuple(r.criterion_id for r in results),
                error=f"{type(exc).__name__}: {exc}",
            )

    if spec.smoothing is not None and verdict.outcome is not None and outcome_history is not None:
        outcome_history.append(verdict.outcome)
        smoothed = smooth(
            list(outcome_history), spec.smoothing.threshold_m, spec.smoothing.window_k
        )
        verdict = replace(verdict, smoothed_outcome=smoothed)

    return SensorRun(
        run_id=plan.run_id,
        sensor_id=spec.sensor_id,
        ticked_at=plan.started_at,
        frame_ids=tuple(f.frame_id for f in plan.frames),
        results=results,
        verdict=verdict,
        skipped=False,
        criteria_snapshot=plan.snapshot_hash,
    )


async def run_sensor(
    spec_provider: Callable[[], SensorSpec],
    window: FrameWindow,
    backend: Backend,
    store: Store,
    clock: Clock,
    id_gen: Callable[[], str] = new_id,
    max_ticks: Optional[int] = None,
    require_active: bool = True,
    stop: Optional[asyncio.Event] = None,
) -> AsyncIterator[SensorRun]:
    """Scheduler loop; yields each SensorRun after it is durably recorded.

    The spec and the sensor's criteria are re-read at every boundary, so
    edits land in the next tick's snapshot, never the current one.
    """
    spec = spec_provider()
    next_boundary = clock.now()
    in_flight: Optional[asyncio.Task] = None
    pending_skips: list[SensorRun] = []
    history: deque = deque(
        maxlen=spec.smoothing.window_k if spec.smoothing else 1
    )
    ticks = 0

    async def _drain():
        runs = [in_flight.result(), *pending_skips]
        pending_skips.clear()
        for run in runs:
            store.record_run(run)
        return runs

    stopper: Optional[asyncio.Task] = None
    try:
        while True:
            if stop is not None and stop.is_set():
                break
            # wait for the boundary, landing the in-flight tick the moment
            # it completes so emission order follows run_id order
            remaining = next_boundary - clock.now()
            if remaining > 0:
                sleeper = asyncio.ensure_future(clock.sleep(remaining))
                if stop is not None and (stopper is None or stopper.done()):
                    stopper = asyncio.ensure_future(stop.wait())
                waits = {sleeper} | ({stopper} if stopper else set())
                while (
                    not sleeper.done()
                    and not (stopper and stopper.done())
                    and (in_flight is None or not in_flight.done())
                ):
                    await asyncio.wait(
                        waits | ({in_flight} if in_flight else set()),
                        return_when=asyncio.FIRST_COMPLETED,
                    )
                    if in_flight is not None and in_flight.done():
                        for run in await _drain():
                            yield run
                        in_flight = None
                if stopper and stopper.done():
                    sleeper.cancel()
                    break
                if not sleeper.done():
                    await sleeper
            boundary_ms = clock.now_ms()
            if in_flight is not None and not in_flight.done():
                # a tick finishing exactly at the boundary counts as
                # finished: give it a few passes to land before skipping
                for _ in range(25):
                    await asyncio.sleep(0)
                    if in_flight.done():
                        break
            if in_flight is not None and in_flight.done():
                for run in await _drain():
                    yield run
                in_flight = None

            spec = spec_provider()
            if require_active and not spec.active:
                break
            if spec.smoothing is not None and history.maxlen != spec.smoothing.window_k:
                history = deque(history, maxlen=spec.smoothing.window_k)
            if max_ticks is not None and ticks >= max_ticks:
                break
            ticks += 1

            if in_flight is not None:
                # previous tick still running: skip-and-log, never queue
                pending_skips.append(
                    SensorRun(
                        run_id=id_gen(),
                        sensor_id=spec.sensor_id,
                        ticked_at=boundary_ms,
                        skipped=True,
                    )
                )
            else:
                try:
                    frames = window.snapshot()
                except EmptyWindow:
                    # capture may not have delivered the first frame yet;
                    # give same-boundary pushes one chance to land
                    await asyncio.sleep(0)
                    try:
                        frames = window.snapshot()
                    except EmptyWindow:
                        frames = ()
                if frames:
                    frames = frames[-spec.window_size :]
                    snapshot_hash, criteria = store.snapshot_criteria(spec.sensor_id)
                    enabled = tuple(
                        sorted(
                            (c for c in criteria if c.enabled),
                            key=lambda c: c.criterion_id,
                        )
                    )
                    plan = TickPlan(
                        run_id=id_gen(),
                        spec=spec,
                        frames=frames,
                        criteria=enabled,
                        snapshot_hash=snapshot_hash,
                        started_at=clock.now_ms(),
                    )
                    in_flight = asyncio.create_task(
                        execute_tick(plan, backend, clock, outcome_history=history)
                    )
            next_boundary += spec.interval

        if in_flight is not None:
            await in_flight
            for run in await _drain():
                yield run
    finally:
        if stopper is not None and not stopper.done():
            stopper.cancel()
        if in_flight is not None and not in_flight.done():
            in_flight.cancel()


class RunBroadcast:
    """Fan-out of emitted runs to stream subscribers.

    Subscribers may lag: queues are bounded and drop the oldest event
    rather than blocking the engine. Persistence happens in the engine
    before broadcast, so a dropped event is recoverable from the store.
    """

    def __init__(self, maxsize: int = 256):
        self._maxsize = maxsize
        self._subscribers: set = set()

    def subscribe(self) -> asyncio.Queue:
        q: asyncio.Queue = asyncio.Queue(maxsize=self._maxsize)
        self._subscribers.add(q)
        return q

    def unsubscribe(self, q: asyncio.Queue) -> None:
        self._subscribers.discard(q)

    def publish(self, run: SensorRun) -> None:
        for q in list(self._subscribers):
            if q.full():
                try:
                    q.get_nowait()
                except asyncio.QueueEmpty:
                    pass
            q.put_nowait(run)
