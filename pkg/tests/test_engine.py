import asyncio
import random

import pytest

from sensorforge.capture import FrameWindow, start_capture, synthetic_source
from sensorforge.clock import FakeClock
from sensorforge.engine import (
    evaluate_criterion,
    run_sensor,
)
from sensorforge.gateway import (
    OracleRule,
    RuleOracleBackend,
    ScriptedBackend,
    build_bootstrap_prompt,
    build_criterion_prompt,
)
from sensorforge.model import (
    IdGenerator,
    Smoothing,
    Valence,
    VerdictMode,
    canonical_json,
    replace,
)

from tests.conftest import DelayBackend, make_criterion, make_frame, make_spec


def synthetic_script(seconds, tags_for=lambda i: {}):
    return [
        {"offset_ms": i * 1000, "tags": tags_for(i), "solid_color": "#204060"}
        for i in range(seconds)
    ]


async def run_simulation(
    spec,
    criteria,
    backend,
    store,
    max_ticks,
    script=None,
    clock=None,
    seed=0,
    mutate=None,
):
    """Capture + engine under a fake clock; returns the emitted runs."""
    clock = clock or FakeClock()
    id_gen = IdGenerator(now_ms=clock.now_ms, rng=random.Random(seed))
    current = {"spec": spec}
    store.put_sensor(spec)
    for c in criteria:
        store.put_criterion(c)
    window = FrameWindow(capacity=max(spec.window_size, 16))
    source = synthetic_source(script or synthetic_script(120))

    async def capture_loop():
        async for captured in start_capture(source, clock):
            store.put_captured(captured)
            window.push(captured.frame)

    capture_task = asyncio.create_task(capture_loop())
    mutate_task = asyncio.create_task(mutate(clock)) if mutate else None
    runs = []
    try:
        async for run in run_sensor(
            spec_provider=lambda: current["spec"],
            window=window,
            backend=backend,
            store=store,
            clock=clock,
            id_gen=id_gen,
            max_ticks=max_ticks,
            require_active=False,
        ):
            runs.append(run)
    finally:
        capture_task.cancel()
        if mutate_task:
            mutate_task.cancel()
    return runs


OUTLET_RULES = RuleOracleBackend([OracleRule("outlet", "open_outlet")])


@pytest.mark.anyio
async def test_sixty_seconds_default_cadence(store):
    spec = make_spec(interval=3.0, window_size=3, capture_rate=1.0)
    criteria = [make_criterion(question="Are there uncovered outlets?")]
    runs = await run_simulation(spec, criteria, OUTLET_RULES, store, max_ticks=20)
    assert len(runs) == 20
    assert all(not r.skipped for r in runs)
    assert all(len(r.frame_ids) <= 3 for r in runs)
    assert [r.ticked_at for r in runs] == [i * 3000 for i in range(20)]


@pytest.mark.anyio
async def test_fan_out_cardinality(store):
    spec = make_spec()
    criteria = [
        make_criterion(criterion_id=f"C{i}", question=f"Check {i}: any outlet issue?")
        for i in range(4)
    ]
    runs = await run_simulation(spec, criteria, OUTLET_RULES, store, max_ticks=3)
    for run in runs:
        assert len(run.results) == 4
        assert [r.criterion_id for r in run.results] == ["C0", "C1", "C2", "C3"]


@pytest.mark.anyio
async def test_per_criterion_failure_is_isolated(store, clock):
    """One missing fixture becomes one errored result, not a failed tick."""
    spec = make_spec(interval=3.0, window_size=1, verdict_mode=VerdictMode.ALL_OF)
    criteria = [
        make_criterion(criterion_id=f"C{i}", title=f"Check {i}", question=f"Is thing {i} fine?")
        for i in range(4)
    ]
    script = synthetic_script(10)
    backend = ScriptedBackend()

    # precompute the frames the tick will see so fixtures can be registered:
    # window_size=1 means the tick at t=0 sees exactly the first frame
    frames = []
    probe_clock = FakeClock()
    async for captured in start_capture(synthetic_source(script), probe_clock):
        frames.append(captured.frame)
        break
    for c in criteria[:3]:
        request = build_criterion_prompt(c, frames[:1], spec.goal)
        backend.add(request, '{"valence":"positive","description":"ok"}')
    # criteria[3] has no fixture -> FixtureMissing -> errored result

    runs = await run_simulation(spec, criteria, backend, store, max_ticks=1, script=script, clock=clock)
    (run,) = runs
    ok = [r for r in run.results if r.ok]
    errored = [r for r in run.results if not r.ok]
    assert len(ok) == 3 and len(errored) == 1
    assert errored[0].criterion_id == "C3"
    assert run.verdict.outcome is Valence.POSITIVE
    assert "Check 3" in run.verdict.explanation


@pytest.mark.anyio
async def test_coalescing_with_slow_backend(store):
    spec = make_spec(interval=3.0, window_size=3)
    criteria = [make_criterion(question="Are there uncovered outlets?")]
    clock = FakeClock()
    slow = DelayBackend(OUTLET_RULES, delay=5.0, clock=clock)
    runs = await run_simulation(
        spec, criteria, slow, store, max_ticks=10, clock=clock
    )
    assert len(runs) == 10
    flags = [r.skipped for r in runs]
    assert flags == [i % 2 == 1 for i in range(10)]  # alternating real/skipped


@pytest.mark.anyio
async def test_no_skips_with_fast_backend(store):
    spec = make_spec(interval=3.0)
    criteria = [make_criterion(question="outlet check?")]
    clock = FakeClock()
    fast = DelayBackend(OUTLET_RULES, delay=0.1, clock=clock)
    runs = await run_simulation(spec, criteria, fast, store, max_ticks=20, clock=clock)
    assert sum(r.skipped for r in runs) == 0


@pytest.mark.anyio
async def test_tick_finishing_exactly_at_boundary_is_not_skipped(store):
    spec = make_spec(interval=3.0)
    criteria = [make_criterion(question="outlet check?")]
    clock = FakeClock()
    exact = DelayBackend(OUTLET_RULES, delay=3.0, clock=clock)
    runs = await run_simulation(spec, criteria, exact, store, max_ticks=6, clock=clock)
    assert sum(r.skipped for r in runs) == 0  # >= semantics at the boundary


@pytest.mark.anyio
async def test_run_ids_monotone_and_unique(store):
    spec = make_spec(interval=3.0)
    criteria = [make_criterion(question="outlet check?")]
    clock = FakeClock()
    slow = DelayBackend(OUTLET_RULES, delay=5.0, clock=clock)
    runs = await run_simulation(spec, criteria, slow, store, max_ticks=12, clock=clock)
    ids = [r.run_id for r in runs]
    assert ids == sorted(ids)
    assert len(set(ids)) == len(ids)


@pytest.mark.anyio
async def test_stream_is_deterministic_with_scripted_clock_and_seed(tmp_path):
    from sensorforge.store import Store

    spec = make_spec(window_size=1)
    criteria = [make_criterion(question="Are there uncovered outlets?")]

    async def one_pass(subdir):
        store = Store(str(tmp_path / subdir))
        try:
            runs = await run_simulation(
                spec,
                criteria,
                OUTLET_RULES,
                store,
                max_ticks=8,
                script=synthetic_script(30, tags_for=lambda i: {"open_outlet": i % 2 == 0}),
            )
            return b"\n".join(canonical_json(r) for r in runs)
        finally:
            store.close()

    assert await one_pass("a") == await one_pass("b")


@pytest.mark.anyio
async def test_snapshot_isolation_under_midtick_edit(store):
    """An edit during an in-flight tick affects the next tick only."""
    spec = make_spec(interval=3.0, window_size=1)
    original = make_criterion(criterion_id="C1", question="Are there uncovered outlets?")
    clock = FakeClock()
    slow = DelayBackend(OUTLET_RULES, delay=2.0, clock=clock)

    async def mutate(mclock):
        await mclock.sleep(1.0)  # mid-flight of the first tick
        edited = replace(original, question="Is the room clear of knives?", updated_at=1000)
        store.put_criterion(edited)

    runs = await run_simulation(
        spec,
        [original],
        slow,
        store,
        max_ticks=2,
        clock=clock,
        mutate=mutate,
    )
    first, second = [r for r in runs if not r.skipped]
    assert "outlet" in first.results[0].raw or "no rule matched" in first.results[0].raw
    assert first.criteria_snapshot != second.criteria_snapshot
    # the in-flight tick used the original wording; the next one sees the edit
    snap_first = store.get_snapshot(first.criteria_snapshot)
    snap_second = store.get_snapshot(second.criteria_snapshot)
    assert snap_first[0].question == "Are there uncovered outlets?"
    assert snap_second[0].question == "Is the room clear of knives?"


@pytest.mark.anyio
async def test_disabled_criterion_not_evaluated(store):
    spec = make_spec()
    criteria = [
        make_criterion(criterion_id="C1", question="outlet one?"),
        make_criterion(criterion_id="C2", question="outlet two?", enabled=False),
    ]
    runs = await run_simulation(spec, criteria, OUTLET_RULES, store, max_ticks=2)
    for run in runs:
        assert [r.criterion_id for r in run.results] == ["C1"]
        assert run.verdict.contributing == ("C1",)


@pytest.mark.anyio
async def test_zero_criteria_fallback_via_scripted_fixture(store, clock):
    spec = make_spec(verdict_mode=VerdictMode.MODEL, window_size=1)
    script = synthetic_script(10)
    probe = FakeClock()
    frames = []
    async for captured in start_capture(synthetic_source(script), probe):
        frames.append(captured.frame)
        break
    backend = ScriptedBackend()
    request = build_bootstrap_prompt(spec.goal, frames[:1], temperature=0.8)
    backend.add(request, '{"outcome":"negative","explanation":"toddler near the vase"}')

    runs = await run_simulation(spec, [], backend, store, max_ticks=2, script=script, clock=clock)
    assert runs[0].verdict.outcome is Valence.NEGATIVE
    assert runs[0].verdict.mode_used is VerdictMode.MODEL
    assert runs[0].verdict.contributing == ()
    assert runs[0].results == ()


@pytest.mark.anyio
async def test_zero_criteria_malformed_fixture_is_errored_run(store, clock):
    spec = make_spec(verdict_mode=VerdictMode.MODEL, window_size=1)
    script = synthetic_script(10)
    probe = FakeClock()
    frames = []
    async for captured in start_capture(synthetic_source(script), probe):
        frames.append(captured.frame)
        break
    backend = ScriptedBackend()
    request = build_bootstrap_prompt(spec.goal, frames[:1], temperature=0.8)
    backend.add(request, "not json at all")
    runs = await run_simulation(spec, [], backend, store, max_ticks=1, script=script, clock=clock)
    assert runs[0].verdict.error is not None
    assert runs[0].verdict.outcome is None


@pytest.mark.anyio
async def test_smoothing_outcomes_recorded(store):
    spec = make_spec(
        verdict_mode=VerdictMode.ALL_OF,
        window_size=1,
        interval=1.0,
        smoothing=Smoothing(window_k=5, threshold_m=3),
    )
    criteria = [make_criterion(question="Are there uncovered outlets?")]
    # outlet tag pattern drives raw outcomes
    pattern = [True, False, False, True, False, True]
    runs = await run_simulation(
        spec,
        criteria,
        OUTLET_RULES,
        store,
        max_ticks=6,
        script=synthetic_script(10, tags_for=lambda i: {"open_outlet": pattern[i % 6]}),
    )
    raw = [r.verdict.outcome for r in runs]
    smoothed = [r.verdict.smoothed_outcome for r in runs]
    assert all(s is not None for s in smoothed)
    # independent sliding-majority check
    from sensorforge.verdict import smooth

    for i in range(len(raw)):
        assert smoothed[i] is smooth(raw[: i + 1], 3, 5)


@pytest.mark.anyio
async def test_evaluate_criterion_requires_frames():
    with pytest.raises(ValueError):
        await evaluate_criterion(make_criterion(), [], "goal", OUTLET_RULES)


@pytest.mark.anyio
async def test_evaluate_criterion_records_parse_failure():
    backend = ScriptedBackend()
    c = make_criterion()
    frame = make_frame(seq=0)[0]
    request = build_criterion_prompt(c, [frame], "goal")
    backend.add(request, "garbage output")
    result = await evaluate_criterion(c, [frame], "goal", backend)
    assert not result.ok
    assert result.raw == "garbage output"
    assert "ParseFailure" in result.error
