"""Service configuration: one JSON file, environment-variable overrides.

Remote API keys never appear in the file; the config only names the
environment variable that holds them.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .capture import CaptureSource, load_synthetic_script, replay_source, camera_source
from .errors import ConfigError
from .gateway import Backend, RemoteBackend, RuleOracleBackend, ScriptedBackend

ENV_PREFIX = "SENSORFORGE_"


@dataclass
class ServiceConfig:
    data_dir: str
    host: str = "127.0.0.1"
    port: int = 8760
    backend: dict = field(default_factory=lambda: {"kind": "scripted", "fixtures": {}})
    capture: dict = field(default_factory=dict)
    max_runs: Optional[int] = None
    min_interval: float = 1.0
    max_interval: float = 3600.0


def _env_overrides(raw: dict) -> dict:
    for key in ("data_dir", "host", "port"):
        value = os.environ.get(ENV_PREFIX + key.upper())
        if value is not None:
            raw[key] = int(value) if key == "port" else value
    return raw


def load_config(path: str) -> ServiceConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError("(file)", f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError("(file)", f"config is not valid JSON: {exc}") from exc
    return parse_config(_env_overrides(raw))


def parse_config(raw: dict) -> ServiceConfig:
    data_dir = raw.get("data_dir")
    if not data_dir or not isinstance(data_dir, str):
        raise ConfigError("data_dir", "required string")
    parent = Path(data_dir).parent
    if not parent.exists():
        raise ConfigError("data_dir", f"parent directory missing: {parent}")
    port = raw.get("port", 8760)
    if not isinstance(port, int) or not 1 <= port <= 65535:
        raise ConfigError("port", "must be an integer in [1, 65535]")
    backend = raw.get("backend", {"kind": "scripted", "fixtures": {}})
    if backend.get("kind") not in ("scripted", "oracle", "remote"):
        raise ConfigError("backend.kind", "must be scripted, oracle, or remote")
    max_runs = raw.get("max_runs")
    if max_runs is not None and (not isinstance(max_runs, int) or max_runs < 1):
        raise ConfigError("max_runs", "must be a positive integer")
    return ServiceConfig(
        data_dir=data_dir,
        host=raw.get("host", "127.0.0.1"),
        port=port,
        backend=backend,
        capture=raw.get("capture", {}),
        max_runs=max_runs,
        min_interval=float(raw.get("min_interval", 1.0)),
        max_interval=float(raw.get("max_interval", 3600.0)),
    )


def build_backend(spec: dict) -> Backend:
    kind = spec.get("kind")
    if kind == "scripted":
        if "fixtures_file" in spec:
            return ScriptedBackend.from_file(spec["fixtures_file"])
        return ScriptedBackend(spec.get("fixtures", {}))
    if kind == "oracle":
        if "rules_file" in spec:
            return RuleOracleBackend.from_file(spec["rules_file"])
        from .gateway import OracleRule

        return RuleOracleBackend(
            [
                OracleRule(
                    question_substring=r["question_substring"],
                    tag=r["tag"],
                    negate=bool(r.get("negate", False)),
                )
                for r in spec.get("rules", [])
            ]
        )
    if kind == "remote":
        endpoint = spec.get("endpoint")
        if not endpoint:
            raise ConfigError("backend.endpoint", "required for remote backend")
        return RemoteBackend(
            endpoint=endpoint,
            model_ids=spec.get("model_ids"),
            api_key_env=spec.get("api_key_env", "SENSORFORGE_API_KEY"),
            timeout=float(spec.get("timeout", 30.0)),
            max_in_flight=int(spec.get("max_in_flight", 8)),
        )
    raise ConfigError("backend.kind", f"unknown backend kind: {kind}")


def build_capture_source(spec: dict, rate: float) -> CaptureSource:
    kind = spec.get("kind", "synthetic")
    if kind == "replay":
        if not spec.get("path"):
            raise ConfigError("capture.path", "required for replay capture")
        return replay_source(spec["path"], rate=rate)
    if kind == "synthetic":
        if "script_file" in spec:
            return load_synthetic_script(spec["script_file"], rate=rate)
        script = spec.get("script") or [
            {"offset_ms": i * int(1000 / rate), "tags": {}, "solid_color": "#808080"}
            for i in range(3600)
        ]
        return CaptureSource(
            kind="synthetic",
            rate=rate,
            script=tuple(
                (int(e.get("offset_ms", 0)), dict(e.get("tags") or {}), e.get("solid_color", "#808080"))
                for e in script
            ),
        )
    if kind == "camera":
        if spec.get("device") is None:
            raise ConfigError("capture.device", "required for camera capture")
        return camera_source(str(spec["device"]), rate=rate)
    raise ConfigError("capture.kind", f"unknown capture kind: {kind}")
