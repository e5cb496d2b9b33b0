"""Frame sources and the bounded sliding window they feed.

Three source kinds: a live camera (adapter boundary, never needed by the
test suite), a replay directory of image files, and a synthetic generator
that renders tagged solid-color frames from a JSON script. All sources
emit through the same async-iterator contract and timestamp frames from
the injected clock.
"""

from __future__ import annotations

import hashlib
import io
import json
import re
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import AsyncIterator, Optional

from PIL import Image, PngImagePlugin, UnidentifiedImageError

from .clock import Clock
from .errors import DecodeError, EmptyWindow, SourceUnavailable
from .model import Frame, FrameEncoding


def frame_id_for(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


@dataclass(frozen=True)
class CapturedFrame:
    frame: Frame
    data: bytes


class FrameWindow:
    """Sliding buffer of the newest frames, single writer, many readers."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("window capacity must be >= 1")
        self.capacity = capacity
        self._frames: list[Frame] = []
        self._lock = threading.Lock()

    def push(self, frame: Frame) -> None:
        with self._lock:
            if self._frames and frame.captured_at <= self._frames[-1].captured_at:
                raise ValueError("frames must arrive with strictly increasing captured_at")
            self._frames.append(frame)
            if len(self._frames) > self.capacity:
                del self._frames[0]

    def snapshot(self) -> tuple:
        """Immutable copy of the newest <= capacity frames, oldest first."""
        with self._lock:
            if not self._frames:
                raise EmptyWindow("no frames captured yet")
            return tuple(self._frames)

    def __len__(self) -> int:
        with self._lock:
            return len(self._frames)


@dataclass(frozen=True)
class CaptureSource:
    kind: str  # "camera" | "replay" | "synthetic"
    rate: float = 1.0
    device: Optional[str] = None
    path: Optional[str] = None  # replay directory
    script: Optional[tuple] = None  # synthetic entries

    def __post_init__(self):
        if self.rate <= 0:
            raise ValueError("capture rate must be > 0")
        if self.kind not in ("camera", "replay", "synthetic"):
            raise ValueError(f"unknown capture source kind: {self.kind}")


def camera_source(device: str, rate: float = 1.0) -> CaptureSource:
    return CaptureSource(kind="camera", rate=rate, device=device)


def replay_source(path: str, rate: float = 1.0) -> CaptureSource:
    return CaptureSource(kind="replay", rate=rate, path=path)


def synthetic_source(script, rate: float = 1.0) -> CaptureSource:
    """Script: iterable of {"offset_ms": int, "tags": {...}, "solid_color": "#rrggbb"}."""
    entries = tuple(
        (int(e.get("offset_ms", i * 1000 / rate)), dict(e.get("tags") or {}), e.get("solid_color", "#808080"))
        for i, e in enumerate(script)
    )
    return CaptureSource(kind="synthetic", rate=rate, script=entries)


def load_synthetic_script(path: str, rate: float = 1.0) -> CaptureSource:
    with open(path, "r", encoding="utf-8") as fh:
        return synthetic_source(json.load(fh), rate=rate)


_REPLAY_NAME = re.compile(r"^(\d+)_(\d+)\.(png|jpg|jpeg)$", re.IGNORECASE)
_IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg"}


def _replay_files(directory: Path) -> list[Path]:
    files = [p for p in directory.iterdir() if p.suffix.lower() in _IMAGE_SUFFIXES]
    if not files:
        raise SourceUnavailable(f"replay directory has no image files: {directory}")

    def sort_key(p: Path):
        m = _REPLAY_NAME.match(p.name)
        if m:
            return (0, int(m.group(1)), int(m.group(2)), p.name)
        return (1, 0, 0, p.name)

    return sorted(files, key=sort_key)


def decode_image(data: bytes) -> FrameEncoding:
    """Validate bytes as PNG/JPEG and report which."""
    try:
        with Image.open(io.BytesIO(data)) as img:
            fmt = img.format
            img.verify()
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise DecodeError(f"undecodable image bytes: {exc}") from exc
    if fmt == "PNG":
        return FrameEncoding.PNG
    if fmt == "JPEG":
        return FrameEncoding.JPEG
    raise DecodeError(f"unsupported image format: {fmt}")


def render_synthetic_frame(color: str, offset_ms: int, tags: dict) -> bytes:
    """Tiny solid-color PNG; metadata goes into a text chunk so frames with
    different tags never collide under content addressing."""
    img = Image.new("RGB", (8, 8), color)
    info = PngImagePlugin.PngInfo()
    info.add_text("sensorforge", json.dumps({"offset_ms": offset_ms, "tags": tags}, sort_keys=True))
    buf = io.BytesIO()
    img.save(buf, format="PNG", pnginfo=info)
    return buf.getvalue()


def _load_replay_tags(directory: Path) -> dict:
    tags_file = directory / "tags.json"
    if tags_file.exists():
        with open(tags_file, "r", encoding="utf-8") as fh:
            return json.load(fh)
    return {}


async def start_capture(source: CaptureSource, clock: Clock) -> AsyncIterator[CapturedFrame]:
    """Emit timestamped frames at ~source.rate until the source runs dry.

    Replay directories emit in filename-timestamp order (``<millis>_<seq>.png``
    when the name parses, plain filename order otherwise). Synthetic scripts
    emit at their scripted offsets. Camera capture loops until cancelled.
    """
    if source.kind == "replay":
        directory = Path(source.path or "")
        if not directory.is_dir():
            raise SourceUnavailable(f"replay directory missing: {directory}")
        files = _replay_files(directory)
        tag_table = _load_replay_tags(directory)
        period = 1.0 / source.rate
        for i, path in enumerate(files):
            if i:
                await clock.sleep(period)
            data = path.read_bytes()
            encoding = decode_image(data)
            yield CapturedFrame(
                frame=Frame(
                    frame_id=frame_id_for(data),
                    captured_at=clock.now_ms(),
                    source_id=f"replay:{directory.name}",
                    encoding=encoding,
                    tags=tag_table.get(path.name, {}),
                ),
                data=data,
            )
    elif source.kind == "synthetic":
        if not source.script:
            raise SourceUnavailable("synthetic script is empty")
        start = clock.now()
        for offset_ms, tags, color in source.script:
            delay = start + offset_ms / 1000.0 - clock.now()
            if delay > 0:
                await clock.sleep(delay)
            data = render_synthetic_frame(color, offset_ms, tags)
            yield CapturedFrame(
                frame=Frame(
                    frame_id=frame_id_for(data),
                    captured_at=clock.now_ms(),
                    source_id="synthetic",
                    encoding=FrameEncoding.PNG,
                    tags=tags,
                ),
                data=data,
            )
    else:  # camera
        async for captured in _capture_camera(source, clock):
            yield captured


async def _capture_camera(source: CaptureSource, clock: Clock) -> AsyncIterator[CapturedFrame]:
    try:
        import cv2
    except ImportError as exc:  # pragma: no cover - environment dependent
        raise SourceUnavailable("no camera adapter available (opencv missing)") from exc
    cap = cv2.VideoCapture(int(source.device) if str(source.device).isdigit() else source.device)
    if not cap.isOpened():
        raise SourceUnavailable(f"camera device unavailable: {source.device}")
    period = 1.0 / source.rate
    try:
        while True:
            ok, bgr = cap.read()
            if not ok:
                raise SourceUnavailable("camera stopped delivering frames")
            ok, encoded = cv2.imencode(".jpg", bgr)
            if not ok:
                raise DecodeError("camera frame failed to encode")
            data = encoded.tobytes()
            yield CapturedFrame(
                frame=Frame(
                    frame_id=frame_id_for(data),
                    captured_at=clock.now_ms(),
                    source_id=f"camera:{source.device}",
                    encoding=FrameEncoding.JPEG,
                ),
                data=data,
            )
            await clock.sleep(period)
    finally:
        cap.release()


def snapshot_window(window: FrameWindow) -> tuple:
    return window.snapshot()
