"""Headless operation: serve the API, run sensors over replay corpora,
export playback, and verify playback fidelity.

Exit codes: 0 success, 2 configuration problem, 3 backend trouble
(including errored verdicts in `run`), 4 verification mismatch.
"""

from __future__ import annotations

import asyncio
import json
import random
import sys
import tempfile
from pathlib import Path

import click

from .capture import FrameWindow, replay_source, start_capture
from .clock import FakeClock, RealClock
from .config import build_backend, load_config
from .engine import run_sensor
from .errors import ConfigError, ParseFailure, SensorforgeError
from .gateway import ResponseSchema, parse_judgment
from .model import (
    Criterion,
    IdGenerator,
    ModelConfig,
    SensorSpec,
    Smoothing,
    Valence,
    VerdictMode,
    canonical_json,
    role_config_from_dict,
    sensor_run_from_dict,
)
from .store import RunQuery, Store

EXIT_CONFIG = 2
EXIT_BACKEND = 3
EXIT_VERIFY = 4


@click.group()
def main():
    """sensorforge command line."""


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path())
def serve(config_path):
    """Run the HTTP + event-stream service."""
    import uvicorn

    from .api import create_app

    try:
        cfg = load_config(config_path)
        app = create_app(cfg)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    uvicorn.run(app, host=cfg.host, port=cfg.port)


def _load_sensor_file(path: str, id_gen) -> SensorSpec:
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    models = ModelConfig()
    if "model_config" in raw:
        mc = raw["model_config"]
        kwargs = {}
        if "criterion_role" in mc:
            kwargs["criterion_role"] = role_config_from_dict(mc["criterion_role"])
        if "verdict_role" in mc:
            kwargs["verdict_role"] = role_config_from_dict(mc["verdict_role"])
        models = ModelConfig(**kwargs)
    smoothing = None
    if raw.get("smoothing"):
        smoothing = Smoothing(
            int(raw["smoothing"]["window_k"]), int(raw["smoothing"]["threshold_m"])
        )
    return SensorSpec(
        sensor_id=raw.get("sensor_id") or id_gen(),
        goal=raw["goal"],
        interval=float(raw.get("interval", 3.0)),
        window_size=int(raw.get("window_size", 3)),
        capture_rate=float(raw.get("capture_rate", 1.0)),
        verdict_mode=VerdictMode(raw.get("verdict_mode", "model")),
        smoothing=smoothing,
        model_config=models,
        active=True,
    )


def _load_criteria_file(path: str, sensor_id: str, id_gen) -> list:
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    criteria = []
    for entry in raw:
        criteria.append(
            Criterion(
                criterion_id=entry.get("criterion_id") or id_gen(),
                sensor_id=sensor_id,
                title=entry.get("title") or entry["question"][:32],
                question=entry["question"],
                enabled=bool(entry.get("enabled", True)),
            )
        )
    return criteria


def _build_cli_backend(spec: str):
    kind, _, arg = spec.partition(":")
    if kind == "scripted":
        return build_backend({"kind": "scripted", "fixtures_file": arg})
    if kind == "oracle":
        return build_backend({"kind": "oracle", "rules_file": arg})
    if kind == "remote":
        return build_backend({"kind": "remote", "endpoint": arg})
    raise ConfigError("backend", f"unknown backend spec {spec!r}")


async def _run_ticks(spec, criteria, frames_dir, backend, ticks, out_path, clock, id_gen, store):
    store.put_sensor(spec)
    for c in criteria:
        store.put_criterion(c)
    window = FrameWindow(capacity=max(spec.window_size, 16))
    source = replay_source(frames_dir, rate=spec.capture_rate)

    async def capture_loop():
        async for captured in start_capture(source, clock):
            store.put_captured(captured)
            window.push(captured.frame)

    capture_task = asyncio.create_task(capture_loop())
    errored = 0
    try:
        with open(out_path, "w", encoding="utf-8") as out:
            stream = run_sensor(
                spec_provider=lambda: spec,
                window=window,
                backend=backend,
                store=store,
                clock=clock,
                id_gen=id_gen,
                max_ticks=ticks,
                require_active=False,
            )
            async for run in stream:
                out.write(canonical_json(run).decode("utf-8") + "\n")
                if run.verdict is not None and run.verdict.error is not None:
                    errored += 1
    finally:
        capture_task.cancel()
    return errored


@main.command()
@click.option("--sensor", "sensor_file", required=True, type=click.Path())
@click.option("--criteria", "criteria_file", required=True, type=click.Path())
@click.option("--frames", "frames_dir", required=True, type=click.Path())
@click.option("--backend", "backend_spec", required=True)
@click.option("--ticks", type=int, required=True)
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--data-dir", type=click.Path(), default=None, help="persist store here (default: temp)")
@click.option("--realtime", is_flag=True, help="use the wall clock instead of a fake clock")
def run(sensor_file, criteria_file, frames_dir, backend_spec, ticks, out_path, data_dir, realtime):
    """Execute N ticks over a replay corpus and write SensorRun JSONL.

    With the default fake clock the output is fully deterministic:
    identical inputs give byte-identical JSONL.
    """
    for path, label in ((sensor_file, "sensor file"), (criteria_file, "criteria file")):
        if not Path(path).is_file():
            click.echo(f"config error: {label} missing: {path}", err=True)
            sys.exit(EXIT_CONFIG)
    if not Path(frames_dir).is_dir():
        click.echo(f"config error: frames directory missing: {frames_dir}", err=True)
        sys.exit(EXIT_CONFIG)
    clock = RealClock() if realtime else FakeClock()
    id_gen = IdGenerator(now_ms=clock.now_ms, rng=random.Random(0))
    try:
        spec = _load_sensor_file(sensor_file, id_gen)
        criteria = _load_criteria_file(criteria_file, spec.sensor_id, id_gen)
        backend = _build_cli_backend(backend_spec)
    except (ConfigError, KeyError, ValueError, json.JSONDecodeError, FileNotFoundError) as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    with tempfile.TemporaryDirectory() as tmp:
        store = Store(data_dir or tmp)
        try:
            errored = asyncio.run(
                _run_ticks(spec, criteria, frames_dir, backend, ticks, out_path, clock, id_gen, store)
            )
        except SensorforgeError as exc:
            click.echo(f"backend error: {exc}", err=True)
            sys.exit(EXIT_BACKEND)
        finally:
            store.close()
    if errored:
        click.echo(f"{errored} errored verdicts", err=True)
        sys.exit(EXIT_BACKEND)
    click.echo(f"wrote {out_path}")


@main.command()
@click.option("--sensor", "sensor_id", required=True)
@click.option("--data-dir", required=True, type=click.Path())
@click.option("--out", "out_path", required=True, type=click.Path())
def export(sensor_id, data_dir, out_path):
    """Dump a sensor's playback history as JSONL."""
    if not Path(data_dir).is_dir():
        click.echo(f"config error: data dir missing: {data_dir}", err=True)
        sys.exit(EXIT_CONFIG)
    store = Store(data_dir)
    try:
        with open(out_path, "w", encoding="utf-8") as out:
            cursor = None
            while True:
                runs, cursor = store.query_runs(
                    RunQuery(sensor_id=sensor_id, cursor=cursor, limit=500)
                )
                for run in runs:
                    out.write(canonical_json(run).decode("utf-8") + "\n")
                if cursor is None:
                    break
    finally:
        store.close()
    click.echo(f"wrote {out_path}")


def _verify_run(run) -> list:
    """Re-parse stored raw responses; return human-readable mismatches."""
    mismatches = []
    ok_valences = []
    for result in run.results:
        if result.error is not None:
            continue
        try:
            valence, description = parse_judgment(result.raw, ResponseSchema.CRITERION_JUDGMENT)
        except ParseFailure as exc:
            mismatches.append(f"{run.run_id}/{result.criterion_id}: raw no longer parses: {exc}")
            continue
        if valence is not result.valence:
            mismatches.append(f"{run.run_id}/{result.criterion_id}: stored valence differs from raw")
        if description != result.description:
            mismatches.append(f"{run.run_id}/{result.criterion_id}: stored description differs from raw")
        ok_valences.append(result.valence)
    verdict = run.verdict
    if verdict is not None and verdict.error is None and ok_valences:
        if verdict.mode_used is VerdictMode.ALL_OF:
            expected = (
                Valence.POSITIVE
                if all(v is Valence.POSITIVE for v in ok_valences)
                else Valence.NEGATIVE
            )
            if verdict.outcome is not expected:
                mismatches.append(f"{run.run_id}: all_of verdict inconsistent with results")
        elif verdict.mode_used is VerdictMode.ANY_OF:
            expected = (
                Valence.POSITIVE
                if any(v is Valence.POSITIVE for v in ok_valences)
                else Valence.NEGATIVE
            )
            if verdict.outcome is not expected:
                mismatches.append(f"{run.run_id}: any_of verdict inconsistent with results")
    return mismatches


@main.command()
@click.option("--runs", "runs_path", required=True, type=click.Path())
@click.option("--verify", is_flag=True, required=True)
def replay(runs_path, verify):
    """Playback fidelity check over an exported runs JSONL."""
    if not Path(runs_path).is_file():
        click.echo(f"config error: runs file missing: {runs_path}", err=True)
        sys.exit(EXIT_CONFIG)
    mismatches = []
    with open(runs_path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                run = sensor_run_from_dict(json.loads(line))
            except (ValueError, KeyError) as exc:
                mismatches.append(f"line {line_no}: undecodable run: {exc}")
                continue
            mismatches.extend(_verify_run(run))
    if mismatches:
        for m in mismatches:
            click.echo(m, err=True)
        sys.exit(EXIT_VERIFY)
    click.echo("verified: stored results match raw responses")


if __name__ == "__main__":
    main()
