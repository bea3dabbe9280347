"""Run detection over frame directories, serially or on a process pool.

Worker count comes from ``MASKDET_THREADS`` (unset, ``0`` or ``auto`` means
one worker per CPU).  BLAS is pinned to a single thread in every worker so
outputs do not depend on the worker count.
"""
from __future__ import annotations

import hashlib
import json
import logging
import multiprocessing as mp
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from .images import list_frames, read_image
from .model import DEFAULT_CLASSES, SSDMobileNetV2
from .postprocess import PostprocessConfig, detect
from .weights import load_weights

log = logging.getLogger(__name__)

STAGES = ("preprocess", "forward", "postprocess", "total")


def resolve_threads(value: str | int | None = None) -> int:
    if value is None:
        value = os.environ.get("MASKDET_THREADS", "auto")
    if isinstance(value, str):
        value = value.strip().lower()
        if value in ("", "auto"):
            value = 0
        else:
            try:
                value = int(value)
            except ValueError:
                raise ValueError(f"MASKDET_THREADS must be an integer or 'auto', got {value!r}")
    if value < 0:
        raise ValueError(f"thread count must be >= 0, got {value}")
    return value or (os.cpu_count() or 1)


@dataclass
class FrameResult:
    frame_id: str
    path: str
    detections: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)
    error: str | None = None


# per-process state for pool workers
_WORKER: dict = {}


def _init_worker(weights_path: str, config: PostprocessConfig, class_names, threadpool=1):
    threadpool_limits(threadpool)
    _WORKER["model"] = SSDMobileNetV2(load_weights(weights_path))
    _WORKER["config"] = config
    _WORKER["classes"] = tuple(class_names)
    _WORKER["frames"] = {}


def _process(model, config, class_names, frame_id, path, frame=None) -> FrameResult:
    result = FrameResult(frame_id, str(path))
    try:
        if frame is None:
            frame = read_image(path)
    except (OSError, ValueError) as exc:
        result.error = f"{type(exc).__name__}: {exc}"
        return result
    t0 = time.perf_counter()
    result.detections = detect(frame, model, config, class_names, result.timings)
    result.timings["total"] = time.perf_counter() - t0
    return result


def _worker_task(args) -> FrameResult:
    frame_id, path, cache = args
    frame = None
    if cache:
        frames = _WORKER["frames"]
        if path not in frames:
            frames[path] = read_image(path)
        frame = frames[path]
    return _process(_WORKER["model"], _WORKER["config"], _WORKER["classes"], frame_id, path, frame)


def frame_source(directory) -> list[tuple[str, Path]]:
    """``(frame_id, path)`` pairs ordered by file name; ids are file stems."""
    return [(p.stem, p) for p in list_frames(directory)]


class Runner:
    def __init__(self, weights_path, config: PostprocessConfig = PostprocessConfig(),
                 class_names: Sequence[str] = DEFAULT_CLASSES, threads: int | None = None):
        self.weights_path = str(weights_path)
        self.config = config
        self.class_names = tuple(class_names)
        self.threads = resolve_threads(threads)
        self._model = None

    @property
    def model(self) -> SSDMobileNetV2:
        if self._model is None:
            self._model = SSDMobileNetV2(load_weights(self.weights_path))
        return self._model

    def _pool(self) -> ProcessPoolExecutor:
        ctx = mp.get_context("fork") if "fork" in mp.get_all_start_methods() else None
        return ProcessPoolExecutor(self.threads, mp_context=ctx, initializer=_init_worker,
                                   initargs=(self.weights_path, self.config, self.class_names))

    def run(self, frames: Sequence[tuple[str, Path]], cache: bool = False) -> list[FrameResult]:
        """Detect on every frame; results keep the input order."""
        if self.threads <= 1 or len(frames) <= 1:
            cached = {}
            out = []
            with threadpool_limits(1):
                for fid, path in frames:
                    frame = None
                    if cache:
                        if path not in cached:
                            cached[path] = read_image(path)
                        frame = cached[path]
                    out.append(_process(self.model, self.config, self.class_names, fid, path, frame))
            return out
        with self._pool() as pool:
            return list(pool.map(_worker_task, [(fid, str(p), cache) for fid, p in frames]))


def detections_to_jsonl(results: Sequence[FrameResult]) -> str:
    lines = []
    for r in results:
        for det in r.detections:
            lines.append(json.dumps(det.to_record(r.frame_id), separators=(", ", ": ")))
    return "".join(line + "\n" for line in lines)


# --- benchmarking ----------------------------------------------------------

@dataclass
class BenchReport:
    frames: int
    threads: int
    total_seconds: float
    stages: dict           # stage -> {"mean", "median", "p95"} in milliseconds
    detections_sha256: str
    speedup: float | None = None
    serial_seconds: float | None = None
    latencies_ms: list = field(default_factory=list, repr=False)

    @property
    def fps(self) -> float:
        return self.frames / self.total_seconds if self.total_seconds > 0 else 0.0

    def to_dict(self) -> dict:
        d = {"frames": self.frames, "threads": self.threads,
             "total_seconds": self.total_seconds, "fps": self.fps,
             "stages_ms": self.stages, "detections_sha256": self.detections_sha256}
        if self.speedup is not None:
            d["serial_seconds"] = self.serial_seconds
            d["speedup"] = self.speedup
        return d

    def table(self) -> str:
        rows = [f"{'stage':<12}{'mean ms':>10}{'median ms':>11}{'p95 ms':>10}"]
        for stage in STAGES:
            s = self.stages[stage]
            rows.append(f"{stage:<12}{s['mean']:>10.2f}{s['median']:>11.2f}{s['p95']:>10.2f}")
        rows.append(f"frames={self.frames} threads={self.threads} "
                    f"total={self.total_seconds:.3f}s fps={self.fps:.2f}")
        if self.speedup is not None:
            rows.append(f"speedup vs 1 worker: {self.speedup:.2f}x")
        return "\n".join(rows)


def _stage_stats(results: Sequence[FrameResult]) -> dict:
    stats = {}
    for stage in STAGES:
        ms = np.array([r.timings[stage] * 1000.0 for r in results], dtype=np.float64)
        stats[stage] = {"mean": float(ms.mean()), "median": float(np.median(ms)),
                        "p95": float(np.percentile(ms, 95))}
    return stats


def _timed_run(runner: Runner, tasks, warmup: int) -> tuple[list[FrameResult], float]:
    if runner.threads <= 1 or len(tasks) <= 1:
        runner.run(tasks[:1] * warmup, cache=True)
        results = runner.run(tasks, cache=True)
        return results, sum(r.timings["total"] for r in results)
    with runner._pool() as pool:
        # warm every worker: load weights and decode frames before timing
        list(pool.map(_worker_task, [(fid, str(p), True) for fid, p in
                                     tasks[:1] * max(warmup, 1) * runner.threads]))
        start = time.perf_counter()
        results = list(pool.map(_worker_task, [(fid, str(p), True) for fid, p in tasks]))
        return results, time.perf_counter() - start


def run_bench(weights_path, frames: Sequence[tuple[str, Path]], warmup: int = 1, repeat: int = 3,
              config: PostprocessConfig = PostprocessConfig(), threads: int | None = None,
              compare_serial: bool = False) -> tuple[BenchReport, list[FrameResult]]:
    """Time ``repeat`` passes over ``frames`` after ``warmup`` untimed detections.

    Serial runs report the sum of per-frame wall latencies as the total, so
    a single frame gives ``fps == 1000 / latency_ms`` exactly.
    """
    if repeat < 1 or warmup < 0:
        raise ValueError("repeat must be >= 1 and warmup >= 0")
    if not frames:
        raise ValueError("no frames to benchmark")
    runner = Runner(weights_path, config, threads=threads)
    tasks = list(frames) * repeat
    results, total = _timed_run(runner, tasks, warmup)
    failed = [r for r in results if r.error]
    if failed:
        raise RuntimeError(f"{failed[0].path}: {failed[0].error}")
    digest = hashlib.sha256(detections_to_jsonl(results[: len(frames)]).encode()).hexdigest()
    report = BenchReport(len(results), runner.threads, total, _stage_stats(results), digest,
                         latencies_ms=[r.timings["total"] * 1000.0 for r in results])
    if compare_serial and runner.threads > 1:
        serial = Runner(weights_path, config, threads=1)
        _, serial_total = _timed_run(serial, tasks, warmup)
        report.serial_seconds = serial_total
        report.speedup = serial_total / total
    return report, results
