"""Shared fixtures: fake clock, deterministic ids, offline backends, and
small factories for specs, criteria, and frames."""

from __future__ import annotations

import random

import pytest

from sensorforge.capture import frame_id_for, render_synthetic_frame
from sensorforge.clock import Clock, FakeClock
from sensorforge.gateway import Backend
from sensorforge.model import (
    Criterion,
    Frame,
    FrameEncoding,
    IdGenerator,
    SensorSpec,
    VerdictMode,
)
from sensorforge.model import TestSuggestion
from sensorforge.store import Store

TestSuggestion.__test__ = False  # domain type, not a test class


@pytest.fixture
def anyio_backend():
    return "asyncio"


@pytest.fixture
def clock():
    return FakeClock()


@pytest.fixture
def id_gen(clock):
    return IdGenerator(now_ms=clock.now_ms, rng=random.Random(0))


@pytest.fixture
def store(tmp_path):
    s = Store(str(tmp_path / "data"))
    yield s
    s.close()


def make_spec(sensor_id="S1", goal="tell me if toddler might damage something", **kwargs):
    kwargs.setdefault("verdict_mode", VerdictMode.ALL_OF)
    return SensorSpec(sensor_id=sensor_id, goal=goal, **kwargs)


def make_criterion(criterion_id="C1", sensor_id="S1", title="Precarious Objects",
                   question="Are there any objects placed precariously?", **kwargs):
    return Criterion(
        criterion_id=criterion_id, sensor_id=sensor_id, title=title, question=question, **kwargs
    )


def make_frame(seq=0, captured_at=None, tags=None, color="#336699"):
    data = render_synthetic_frame(color, seq * 1000, tags or {})
    return (
        Frame(
            frame_id=frame_id_for(data),
            captured_at=captured_at if captured_at is not None else seq * 1000,
            source_id="synthetic",
            encoding=FrameEncoding.PNG,
            tags=tags or {},
        ),
        data,
    )


class DelayBackend(Backend):
    """Wraps a backend with injected latency on the shared clock."""

    def __init__(self, inner: Backend, delay: float, clock: Clock):
        self.inner = inner
        self.delay = delay
        self.clock = clock
        self.model_id = inner.model_id

    async def complete(self, request):
        await self.clock.sleep(self.delay)
        return await self.inner.complete(request)
