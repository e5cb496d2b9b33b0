"""HTTP + SSE service wrapping the sensor runtime.

All responses are canonical JSON of the core domain types. Mutations go
over plain HTTP; the only push surface is the one-way per-sensor run
stream, which a client can resume gap-free with ``?after=<run_id>``.
"""

from __future__ import annotations

import asyncio
import base64
import binascii
import json
from contextlib import asynccontextmanager
from typing import Optional

from fastapi import FastAPI, Request, Response
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse, StreamingResponse

from .. import authoring
from ..capture import FrameWindow, start_capture
from ..clock import Clock, RealClock
from ..config import ServiceConfig, build_backend, build_capture_source
from ..engine import RunBroadcast, run_sensor
from ..errors import (
    BackendError,
    BackendTimeout,
    DecodeError,
    DuplicateRun,
    FixtureMissing,
    FrameMissing,
    ParseFailure,
    SourceUnavailable,
    UnknownCriterion,
    UnknownSensor,
)
from ..gateway import Backend
from ..model import (
    Annotation,
    Criterion,
    ExampleAttachment,
    ExampleKind,
    ModelConfig,
    Provenance,
    RoleConfig,
    SensorRun,
    SensorSpec,
    Smoothing,
    Valence,
    VerdictMode,
    canonical_json,
    new_id,
    replace,
)
from ..store import RunQuery, Store
from .schemas import (
    CriterionCreate,
    CriterionPatch,
    DiffRequest,
    ExampleIn,
    SensorCreate,
    SensorPatch,
)


class ApiError(Exception):
    def __init__(self, status: int, detail, field_path: Optional[str] = None):
        self.status = status
        self.detail = detail
        self.field_path = field_path


class _RunningSensor:
    def __init__(self, window: FrameWindow, stop: asyncio.Event):
        self.window = window
        self.stop = stop
        self.capture_task: Optional[asyncio.Task] = None
        self.engine_task: Optional[asyncio.Task] = None


class SensorManager:
    """Owns the per-sensor capture loop, scheduler task, and broadcast hub."""

    def __init__(self, store: Store, backend: Backend, clock: Clock, config: ServiceConfig, id_gen=new_id):
        self.store = store
        self.backend = backend
        self.clock = clock
        self.config = config
        self.id_gen = id_gen
        self._running: dict = {}
        self._hubs: dict = {}

    def hub(self, sensor_id: str) -> RunBroadcast:
        if sensor_id not in self._hubs:
            self._hubs[sensor_id] = RunBroadcast()
        return self._hubs[sensor_id]

    def is_running(self, sensor_id: str) -> bool:
        return sensor_id in self._running

    def latest_frames(self, sensor_id: str) -> tuple:
        running = self._running.get(sensor_id)
        if running is None:
            return ()
        try:
            return running.window.snapshot()
        except Exception:
            return ()

    async def start(self, sensor_id: str) -> None:
        if sensor_id in self._running:
            return
        spec = self.store.get_sensor(sensor_id)
        window = FrameWindow(capacity=max(spec.window_size, 16))
        running = _RunningSensor(window, asyncio.Event())
        self._running[sensor_id] = running
        running.capture_task = asyncio.create_task(self._capture_loop(spec, window))
        running.engine_task = asyncio.create_task(self._engine_loop(sensor_id, running))

    async def _capture_loop(self, spec: SensorSpec, window: FrameWindow) -> None:
        source = build_capture_source(self.config.capture, rate=spec.capture_rate)
        try:
            async for captured in start_capture(source, self.clock):
                self.store.put_captured(captured)
                window.push(captured.frame)
        except (SourceUnavailable, DecodeError):
            pass  # engine keeps ticking over whatever frames arrived

    async def _engine_loop(self, sensor_id: str, running: _RunningSensor) -> None:
        hub = self.hub(sensor_id)
        stream = run_sensor(
            spec_provider=lambda: self.store.get_sensor(sensor_id),
            window=running.window,
            backend=self.backend,
            store=self.store,
            clock=self.clock,
            id_gen=self.id_gen,
            stop=running.stop,
        )
        try:
            async for run in stream:
                hub.publish(run)
        except UnknownSensor:
            pass  # sensor deleted while running
        finally:
            if running.capture_task:
                running.capture_task.cancel()
            self._running.pop(sensor_id, None)

    async def stop(self, sensor_id: str) -> None:
        """Graceful: the in-flight tick completes and persists before return."""
        running = self._running.get(sensor_id)
        if running is None:
            return
        running.stop.set()
        if running.engine_task:
            try:
                await running.engine_task
            except asyncio.CancelledError:
                pass

    async def stop_all(self) -> None:
        for sensor_id in list(self._running):
            await self.stop(sensor_id)


def _json(obj, status_code: int = 200) -> Response:
    body = canonical_json(obj) if not isinstance(obj, bytes) else obj
    return Response(content=body, media_type="application/json", status_code=status_code)


def _parse_verdict_mode(value: str) -> VerdictMode:
    try:
        return VerdictMode(value)
    except ValueError:
        raise ApiError(400, f"invalid verdict_mode {value!r}", field_path="verdict_mode")


def _parse_outcome(value: Optional[str]) -> Optional[Valence]:
    if value is None:
        return None
    try:
        return Valence(value)
    except ValueError:
        raise ApiError(400, f"invalid outcome {value!r}", field_path="outcome")


def create_app(
    config: ServiceConfig,
    clock: Optional[Clock] = None,
    backend: Optional[Backend] = None,
    id_gen=new_id,
) -> FastAPI:
    store = Store(config.data_dir, max_runs=config.max_runs)
    backend = backend or build_backend(config.backend)
    clock = clock or RealClock()

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        for spec in store.list_sensors():
            if spec.active:
                await manager.start(spec.sensor_id)
        yield
        await manager.stop_all()
        store.close()

    app = FastAPI(title="sensorforge", lifespan=lifespan)
    manager = SensorManager(store, backend, clock, config, id_gen=id_gen)
    app.state.store = store
    app.state.manager = manager
    app.state.backend = backend
    app.state.clock = clock

    # -- error mapping ------------------------------------------------------

    @app.exception_handler(RequestValidationError)
    async def _validation_handler(request: Request, exc: RequestValidationError):
        errors = [
            {"field_path": ".".join(str(p) for p in e["loc"] if p != "body"), "message": e["msg"]}
            for e in exc.errors()
        ]
        return JSONResponse(status_code=400, content={"detail": "validation failed", "errors": errors})

    @app.exception_handler(ApiError)
    async def _api_error_handler(request: Request, exc: ApiError):
        content = {"detail": exc.detail}
        if exc.field_path:
            content["errors"] = [{"field_path": exc.field_path, "message": exc.detail}]
        return JSONResponse(status_code=exc.status, content=content)

    @app.exception_handler(UnknownSensor)
    @app.exception_handler(UnknownCriterion)
    @app.exception_handler(FrameMissing)
    async def _not_found_handler(request: Request, exc: Exception):
        return JSONResponse(status_code=404, content={"detail": str(exc)})

    @app.exception_handler(DuplicateRun)
    async def _conflict_handler(request: Request, exc: Exception):
        return JSONResponse(status_code=409, content={"detail": str(exc)})

    @app.exception_handler(ParseFailure)
    async def _parse_handler(request: Request, exc: ParseFailure):
        return JSONResponse(
            status_code=422, content={"detail": str(exc), "raw_model_text": exc.raw}
        )

    @app.exception_handler(BackendError)
    @app.exception_handler(BackendTimeout)
    @app.exception_handler(FixtureMissing)
    async def _backend_handler(request: Request, exc: Exception):
        detail = {"detail": f"{type(exc).__name__}: {exc}"}
        if isinstance(exc, BackendError):
            detail["backend_body"] = exc.body
        return JSONResponse(status_code=502, content=detail)

    # -- helpers ------------------------------------------------------------

    def _now_ms() -> int:
        return clock.now_ms()

    def _check_interval(value: float) -> float:
        if not config.min_interval <= value <= config.max_interval:
            raise ApiError(
                400,
                f"interval must lie in [{config.min_interval}, {config.max_interval}] seconds",
                field_path="interval",
            )
        return float(value)

    def _build_examples(items: list) -> tuple:
        examples = []
        for i, item in enumerate(items):
            examples.append(_build_example(item, i))
        return tuple(examples)

    def _build_example(item: ExampleIn, index: int) -> ExampleAttachment:
        try:
            kind = ExampleKind(item.kind)
        except ValueError:
            raise ApiError(400, f"invalid example kind {item.kind!r}", field_path=f"examples.{index}.kind")
        frame_ref = item.frame_ref
        if kind is ExampleKind.IMAGE and item.image_b64:
            try:
                data = base64.b64decode(item.image_b64, validate=True)
            except (binascii.Error, ValueError):
                raise ApiError(400, "invalid base64 image data", field_path=f"examples.{index}.image_b64")
            try:
                frame_ref = store.put_frame(data, _now_ms(), "upload")
            except DecodeError as exc:
                raise ApiError(400, str(exc), field_path=f"examples.{index}.image_b64")
        if kind is ExampleKind.IMAGE and frame_ref and not store.has_frame(frame_ref):
            raise FrameMissing(frame_ref)
        try:
            return ExampleAttachment(
                kind=kind,
                text=item.text,
                frame_ref=frame_ref,
                annotations=tuple(
                    Annotation(rect=tuple(a.rect), label=a.label) for a in item.annotations
                ),
            )
        except ValueError as exc:
            raise ApiError(400, str(exc), field_path=f"examples.{index}")

    def _spec_from_create(body: SensorCreate) -> SensorSpec:
        models = ModelConfig()
        if body.models:
            if body.models.criterion_role:
                models = replace(
                    models,
                    criterion_role=RoleConfig(
                        body.models.criterion_role.model_id, body.models.criterion_role.temperature
                    ),
                )
            if body.models.verdict_role:
                models = replace(
                    models,
                    verdict_role=RoleConfig(
                        body.models.verdict_role.model_id, body.models.verdict_role.temperature
                    ),
                )
        smoothing = None
        if body.smoothing:
            try:
                smoothing = Smoothing(body.smoothing.window_k, body.smoothing.threshold_m)
            except ValueError as exc:
                raise ApiError(400, str(exc), field_path="smoothing")
        return SensorSpec(
            sensor_id=id_gen(),
            goal=body.goal,
            interval=_check_interval(body.interval),
            window_size=body.window_size,
            capture_rate=body.capture_rate,
            verdict_mode=_parse_verdict_mode(body.verdict_mode),
            smoothing=smoothing,
            model_config=models,
            active=body.active,
        )

    # -- sensors ------------------------------------------------------------

    @app.post("/sensors", status_code=201)
    async def create_sensor(body: SensorCreate):
        spec = _spec_from_create(body)
        store.put_sensor(spec)
        if spec.active:
            await manager.start(spec.sensor_id)
        return _json(spec, status_code=201)

    @app.get("/sensors")
    async def list_sensors():
        return _json(store.list_sensors())

    @app.get("/sensors/{sensor_id}")
    async def get_sensor(sensor_id: str):
        return _json(store.get_sensor(sensor_id))

    @app.patch("/sensors/{sensor_id}")
    async def patch_sensor(sensor_id: str, body: SensorPatch):
        spec = store.get_sensor(sensor_id)
        updates = {}
        if body.goal is not None:
            updates["goal"] = body.goal
        if body.interval is not None:
            updates["interval"] = _check_interval(body.interval)
        if body.window_size is not None:
            updates["window_size"] = body.window_size
        if body.capture_rate is not None:
            updates["capture_rate"] = body.capture_rate
        if body.verdict_mode is not None:
            updates["verdict_mode"] = _parse_verdict_mode(body.verdict_mode)
        if body.clear_smoothing:
            updates["smoothing"] = None
        elif body.smoothing is not None:
            try:
                updates["smoothing"] = Smoothing(body.smoothing.window_k, body.smoothing.threshold_m)
            except ValueError as exc:
                raise ApiError(400, str(exc), field_path="smoothing")
        if body.models is not None:
            models = spec.model_config
            if body.models.criterion_role:
                models = replace(
                    models,
                    criterion_role=RoleConfig(
                        body.models.criterion_role.model_id, body.models.criterion_role.temperature
                    ),
                )
            if body.models.verdict_role:
                models = replace(
                    models,
                    verdict_role=RoleConfig(
                        body.models.verdict_role.model_id, body.models.verdict_role.temperature
                    ),
                )
            updates["model_config"] = models
        if body.active is not None:
            updates["active"] = body.active
        try:
            spec = replace(spec, **updates)
        except ValueError as exc:
            raise ApiError(400, str(exc))
        store.put_sensor(spec)
        if body.active is True:
            await manager.start(sensor_id)
        elif body.active is False:
            await manager.stop(sensor_id)
        return _json(spec)

    @app.delete("/sensors/{sensor_id}", status_code=204)
    async def delete_sensor(sensor_id: str):
        store.get_sensor(sensor_id)
        await manager.stop(sensor_id)
        store.delete_sensor(sensor_id)
        return Response(status_code=204)

    # -- criteria -----------------------------------------------------------

    @app.get("/sensors/{sensor_id}/criteria")
    async def list_criteria(sensor_id: str):
        return _json(store.list_criteria(sensor_id))

    @app.post("/sensors/{sensor_id}/criteria", status_code=201)
    async def create_criterion(sensor_id: str, body: CriterionCreate):
        spec = store.get_sensor(sensor_id)
        try:
            provenance = Provenance(body.provenance)
        except ValueError:
            raise ApiError(400, f"invalid provenance {body.provenance!r}", field_path="provenance")
        title = body.title
        if not title:
            title = await authoring.generate_title(
                body.question,
                backend,
                temperature=spec.model_config.verdict_role.temperature,
                clock=clock,
            )
        now = _now_ms()
        criterion = Criterion(
            criterion_id=id_gen(),
            sensor_id=sensor_id,
            title=title[:32],
            question=body.question,
            examples=_build_examples(body.examples),
            enabled=body.enabled,
            provenance=provenance,
            created_at=now,
            updated_at=now,
        )
        store.put_criterion(criterion)
        return _json(criterion, status_code=201)

    @app.get("/criteria/{criterion_id}")
    async def get_criterion(criterion_id: str):
        return _json(store.get_criterion(criterion_id))

    @app.patch("/criteria/{criterion_id}")
    async def patch_criterion(criterion_id: str, body: CriterionPatch):
        criterion = store.get_criterion(criterion_id)
        updates = {"updated_at": _now_ms()}
        if body.question is not None:
            updates["question"] = body.question
        if body.title is not None:
            if not body.title.strip():
                raise ApiError(400, "title must be non-empty", field_path="title")
            updates["title"] = body.title[:32]
        if body.enabled is not None:
            updates["enabled"] = body.enabled
        if body.examples is not None:
            updates["examples"] = _build_examples(body.examples)
        try:
            criterion = replace(criterion, **updates)
        except ValueError as exc:
            raise ApiError(400, str(exc))
        store.put_criterion(criterion)
        return _json(criterion)

    @app.delete("/criteria/{criterion_id}", status_code=204)
    async def delete_criterion(criterion_id: str):
        store.delete_criterion(criterion_id)
        return Response(status_code=204)

    @app.post("/criteria/{criterion_id}/examples")
    async def attach_example(criterion_id: str, body: ExampleIn):
        criterion = store.get_criterion(criterion_id)
        example = _build_example(body, len(criterion.examples))
        criterion = replace(
            criterion, examples=criterion.examples + (example,), updated_at=_now_ms()
        )
        store.put_criterion(criterion)
        return _json(criterion)

    # -- authoring ----------------------------------------------------------

    @app.post("/sensors/{sensor_id}/criteria:generate")
    async def generate_criteria(sensor_id: str):
        spec = store.get_sensor(sensor_id)
        existing = store.list_criteria(sensor_id)
        drafts = await authoring.generate_criteria(
            spec.goal,
            manager.latest_frames(sensor_id),
            existing,
            backend,
            sensor_id,
            temperature=spec.model_config.verdict_role.temperature,
            now_ms=_now_ms(),
            id_gen=id_gen,
            clock=clock,
        )
        return _json(drafts)

    @app.post("/sensors/{sensor_id}/examples-diff")
    async def examples_diff(sensor_id: str, body: DiffRequest):
        spec = store.get_sensor(sensor_id)
        categories = [
            authoring.DiffCategory(label=c.label, frame_refs=tuple(c.frame_refs))
            for c in body.categories
        ]
        result = await authoring.examples_diff(
            spec.goal,
            categories,
            store.list_criteria(sensor_id),
            backend,
            store,
            sensor_id,
            temperature=spec.model_config.verdict_role.temperature,
            now_ms=_now_ms(),
            id_gen=id_gen,
            clock=clock,
        )
        return _json({"reasoning": result.reasoning, "proposed": list(result.proposed)})

    @app.get("/sensors/{sensor_id}/diff-labels")
    async def diff_labels(sensor_id: str):
        spec = store.get_sensor(sensor_id)
        labels = authoring.default_diff_labels(spec.goal)
        return _json({"labels": list(labels)})

    @app.post("/criteria/{criterion_id}/test-cases")
    async def test_cases(criterion_id: str):
        criterion = store.get_criterion(criterion_id)
        spec = store.get_sensor(criterion.sensor_id)
        avoid = store.list_suggestions(criterion_id)
        suggestions = await authoring.generate_test_cases(
            criterion,
            spec.goal,
            backend,
            avoid=avoid,
            temperature=spec.model_config.verdict_role.temperature,
            clock=clock,
        )
        store.put_suggestions(suggestions)
        return _json(suggestions)

    @app.get("/criteria/{criterion_id}/test-cases")
    async def list_test_cases(criterion_id: str):
        store.get_criterion(criterion_id)
        return _json(store.list_suggestions(criterion_id))

    # -- playback -----------------------------------------------------------

    @app.get("/sensors/{sensor_id}/runs")
    async def query_runs(
        sensor_id: str,
        since: Optional[int] = None,
        until: Optional[int] = None,
        criterion_id: Optional[str] = None,
        outcome: Optional[str] = None,
        cursor: Optional[str] = None,
        limit: int = 100,
    ):
        store.get_sensor(sensor_id)
        runs, next_cursor = store.query_runs(
            RunQuery(
                sensor_id=sensor_id,
                since=since,
                until=until,
                criterion_id=criterion_id,
                outcome=_parse_outcome(outcome),
                cursor=cursor,
                limit=max(1, min(limit, 1000)),
            )
        )
        payload = {
            "runs": [json.loads(canonical_json(r)) for r in runs],
            "next_cursor": next_cursor,
        }
        return _json(payload)

    @app.get("/snapshots/{snapshot_hash}")
    async def get_snapshot(snapshot_hash: str):
        return _json(list(store.get_snapshot(snapshot_hash)))

    @app.get("/frames/{frame_id}")
    async def get_frame(frame_id: str):
        data, encoding = store.get_frame_bytes(frame_id)
        media = "image/png" if encoding.value == "png" else "image/jpeg"
        return Response(content=data, media_type=media)

    # -- live stream ----------------------------------------------------------

    def _sse(run: SensorRun) -> str:
        return f"event: run\nid: {run.run_id}\ndata: {canonical_json(run).decode('utf-8')}\n\n"

    @app.get("/sensors/{sensor_id}/stream")
    async def stream_runs(
        sensor_id: str, after: Optional[str] = None, limit: Optional[int] = None
    ):
        """SSE run stream; ``limit`` closes the stream after that many
        events (useful for polling clients and curl)."""
        store.get_sensor(sensor_id)
        hub = manager.hub(sensor_id)

        async def gen():
            queue = hub.subscribe()
            last = after or ""
            sent = 0
            try:
                if after is not None:
                    cursor = after
                    while True:
                        runs, next_cursor = store.query_runs(
                            RunQuery(sensor_id=sensor_id, cursor=cursor or None, limit=500)
                        )
                        for run in runs:
                            if run.run_id > last:
                                yield _sse(run)
                                last = run.run_id
                                sent += 1
                                if limit is not None and sent >= limit:
                                    return
                        if next_cursor is None:
                            break
                        cursor = next_cursor
                while limit is None or sent < limit:
                    run = await queue.get()
                    if run.run_id <= last:
                        continue
                    yield _sse(run)
                    last = run.run_id
                    sent += 1
            finally:
                hub.unsubscribe(queue)

        return StreamingResponse(gen(), media_type="text/event-stream")

    return app
