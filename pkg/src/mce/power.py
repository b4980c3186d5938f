"""Power sampling sources and watt/delta/ratio arithmetic.

Measurement is abstracted behind samplers carrying (timestamp, watts)
readings: a trace-file replayer for tests and offline analysis, and a
polling reader over a sysfs-style file for real devices. Trace
timestamps live on their own timeline; the bench harness aligns the end
of the trace with the end of the timed run when merging.
"""

from __future__ import annotations

import csv
import threading
import time
from dataclasses import dataclass
from pathlib import Path


class PowerError(Exception):
    pass


@dataclass(frozen=True)
class PowerStats:
    mean_w: float
    idle_w: float | None = None
    delta_w: float | None = None
    ratio: float | None = None

    def as_dict(self) -> dict:
        return {"mean_w": self.mean_w, "idle_w": self.idle_w,
                "delta_w": self.delta_w, "ratio": self.ratio}


class TraceSampler:
    """Replays a ``timestamp_s,watts`` CSV trace."""

    def __init__(self, path: str | Path):
        self.samples: list[tuple[float, float]] = []
        with open(path, newline="") as fh:
            for row in csv.reader(fh):
                if not row or len(row) < 2:
                    continue
                try:
                    self.samples.append((float(row[0]), float(row[1])))
                except ValueError:
                    continue  # header or comment row
        if not self.samples:
            raise PowerError(f"{path}: no power readings")
        self.samples.sort(key=lambda r: r[0])

    @property
    def start(self) -> float:
        return self.samples[0][0]

    @property
    def end(self) -> float:
        return self.samples[-1][0]

    def between(self, t0: float, t1: float) -> list[float]:
        return [w for t, w in self.samples if t0 <= t <= t1]


class FilePowerSource:
    """Reads instantaneous watts from a file (e.g. an INA3221 sysfs
    node); ``scale`` converts the stored unit to watts."""

    def __init__(self, path: str | Path, scale: float = 1.0):
        self.path = Path(path)
        self.scale = scale

    def read(self) -> float:
        return float(self.path.read_text().strip()) * self.scale


class PowerMonitor:
    """Polls a :class:`FilePowerSource` on a background thread, stamping
    readings with the monotonic clock so they merge with run windows."""

    def __init__(self, source: FilePowerSource, interval_s: float = 0.1):
        self.source = source
        self.interval_s = interval_s
        self.samples: list[tuple[float, float]] = []
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None

    def start(self) -> None:
        self._stop.clear()
        self._thread = threading.Thread(target=self._loop, daemon=True)
        self._thread.start()

    def _loop(self) -> None:
        while not self._stop.is_set():
            self.samples.append((time.monotonic(), self.source.read()))
            self._stop.wait(self.interval_s)

    def stop(self) -> None:
        if self._thread is not None:
            self._stop.set()
            self._thread.join()
            self._thread = None

    def between(self, t0: float, t1: float) -> list[float]:
        return [w for t, w in self.samples if t0 <= t <= t1]


def sample_power(sampler, window: tuple[float, float]) -> float:
    """Arithmetic mean of the sampler's readings inside the window."""
    t0, t1 = window
    readings = sampler.between(t0, t1)
    if not readings:
        raise PowerError(f"no power readings in window [{t0}, {t1}]")
    return sum(readings) / len(readings)


def power_delta_ratio(run_mean_w: float, idle_mean_w: float,
                      reference_mean_w: float | None = None):
    """Delta from idle and, when a reference is given, the run/reference
    ratio the power tables report."""
    if run_mean_w <= 0 or idle_mean_w <= 0:
        raise PowerError("power readings must be positive watts")
    delta = run_mean_w - idle_mean_w
    if reference_mean_w is None:
        return delta, None
    if reference_mean_w <= 0:
        raise PowerError("reference power must be positive watts")
    return delta, run_mean_w / reference_mean_w


def trace_power_stats(trace: TraceSampler, run_duration_s: float,
                      reference_mean_w: float | None = None) -> PowerStats:
    """Derive run/idle stats from a trace by aligning the trace's tail
    with the timed run: the last ``run_duration_s`` seconds are the run
    window and everything before it is idle."""
    run_start = max(trace.end - run_duration_s, trace.start)
    mean = sample_power(trace, (run_start, trace.end))
    idle_readings = trace.between(trace.start, run_start - 1e-12)
    if not idle_readings:
        return PowerStats(mean_w=mean)
    idle = sum(idle_readings) / len(idle_readings)
    delta, ratio = power_delta_ratio(mean, idle, reference_mean_w)
    return PowerStats(mean_w=mean, idle_w=idle, delta_w=delta, ratio=ratio)
