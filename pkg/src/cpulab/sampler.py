"""Background CPU/RAM sampling and power-meter log ingestion.

The collector differentiates OS-provided cumulative CPU times between
ticks, normalizes by core count to percent-of-total-capacity, and stores
(t, cpu_pct, ram_mb) samples on a fixed tick grid. Missed ticks are
skipped, never back-filled. Two scopes exist: the whole machine (default)
or the process tree rooted at a given pid. Energy comes from a meter log
file (one ``t_seconds watts`` pair per line), read back when sampling
stops, so any external meter that appends to a file plugs in directly.
"""

from __future__ import annotations

import json
import math
import os
import platform
import threading
import time
import uuid
from dataclasses import dataclass
from pathlib import Path

import psutil

from .errors import (
    CapabilityError,
    InputError,
    NotFoundError,
    StateError,
)
from .trace_core import (
    EnergyTrace,
    ResourceSample,
    ResourceTrace,
    load_energy_trace,
)

PROCFS_ENV = "CPULAB_PROCFS"

MB = 1024 * 1024


@dataclass(frozen=True)
class SamplerConfig:
    """Collection settings.

    ``scope`` is "system" for whole-machine counters, a pid for the process
    tree rooted there, or "backend" — a sentinel the run orchestrator
    resolves to its backend server's pid, which keeps the sampler's own
    cost out of the measured tree. ``energy_source`` names a meter log
    file to replay at stop; ``energy_time_offset`` is subtracted from its
    timestamps to align them with the run-start epoch. ``spool_path``
    streams samples to disk as they are taken so a crash keeps the trace.
    """

    rate_hz: float = 5.0
    scope: str | int = "system"
    energy_source: str | Path | None = None
    energy_time_offset: float = 0.0
    spool_path: str | Path | None = None
    child_refresh_s: float = 1.0
    device: str = ""

    def __post_init__(self):
        if not 1.0 <= self.rate_hz <= 50.0:
            raise InputError(f"rate_hz must be in [1, 50], got {self.rate_hz}")
        if isinstance(self.scope, str) and self.scope not in ("system", "backend"):
            raise InputError(
                f"scope must be 'system', 'backend', or a pid, got {self.scope!r}"
            )
        if self.energy_source is not None and not Path(self.energy_source).exists():
            raise InputError(f"energy_source not found: {self.energy_source}")


def _apply_procfs_override() -> None:
    override = os.environ.get(PROCFS_ENV)
    if override:
        psutil.PROCFS_PATH = override


def default_device_label() -> str:
    return f"{platform.system()}-{platform.machine()}-{psutil.cpu_count() or 1}c"


class _SystemReader:
    """Whole-machine busy time from aggregate cumulative CPU counters."""

    def __init__(self):
        self.ncpu = psutil.cpu_count() or 1

    @staticmethod
    def _busy_total() -> tuple[float, float]:
        cur = psutil.cpu_times()
        total = sum(cur)
        idle = cur.idle + getattr(cur, "iowait", 0.0)
        return total - idle, total

    def probe(self) -> None:
        """Fail fast when the aggregate counters are frozen (containers,
        restricted kernels): total CPU time always advances on a live host."""
        _, t0 = self._busy_total()
        time.sleep(0.05)
        _, t1 = self._busy_total()
        if t1 - t0 <= 0.0:
            raise CapabilityError(
                "system-wide CPU counters are not advancing on this platform; "
                "use process-tree scope instead"
            )

    def read(self) -> tuple[float, float]:
        """(cumulative busy seconds, current RAM MB used)."""
        busy, _ = self._busy_total()
        return busy, psutil.virtual_memory().used / MB


class _ProcessTreeReader:
    """Cumulative CPU seconds and resident memory over a process tree.

    Live processes contribute their own user+system plus the reaped-children
    counters the kernel rolls up for them, so work done by short-lived
    children is retained after they exit. Children are discovered
    periodically and may also be registered explicitly via ``watch``.
    """

    RAM_REFRESH_S = 0.1  # resident size moves slowly; skip most statm reads

    def __init__(self, root_pid: int, child_refresh_s: float):
        self.ncpu = psutil.cpu_count() or 1
        self.child_refresh_s = child_refresh_s
        try:
            self.root = psutil.Process(root_pid)
        except psutil.NoSuchProcess as exc:
            raise NotFoundError(f"no such process: {root_pid}") from exc
        self._watched: dict[int, psutil.Process] = {}
        self._discovered: dict[int, psutil.Process] = {}
        self._last_refresh = 0.0
        self._last_ram_t = float("-inf")
        self._ram = 0.0
        self._lock = threading.Lock()

    def probe(self) -> None:
        if not self.root.is_running():
            raise NotFoundError(f"process {self.root.pid} exited before sampling")

    def watch(self, pid: int) -> None:
        with self._lock:
            try:
                self._watched[pid] = psutil.Process(pid)
            except psutil.NoSuchProcess:
                pass

    def _procs(self) -> list[psutil.Process]:
        now = time.monotonic()
        if now - self._last_refresh >= self.child_refresh_s:
            self._last_refresh = now
            try:
                self._discovered = {
                    p.pid: p for p in self.root.children(recursive=True)
                }
            except psutil.NoSuchProcess:
                self._discovered = {}
        with self._lock:
            merged = {self.root.pid: self.root}
            merged.update(self._discovered)
            merged.update(self._watched)
        return list(merged.values())

    def read(self) -> tuple[float, float]:
        now = time.monotonic()
        want_ram = now - self._last_ram_t >= self.RAM_REFRESH_S
        busy = 0.0
        rss = 0.0
        for proc in self._procs():
            try:
                with proc.oneshot():
                    ct = proc.cpu_times()
                    busy += ct.user + ct.system
                    busy += getattr(ct, "children_user", 0.0) + getattr(
                        ct, "children_system", 0.0
                    )
                    if want_ram:
                        rss += proc.memory_info().rss / MB
            except (psutil.NoSuchProcess, psutil.AccessDenied):
                continue
        if want_ram:
            self._ram = rss
            self._last_ram_t = now
        return busy, self._ram


class SamplerHandle:
    """One live collection session; produced by :func:`start_sampling`."""

    def __init__(self, config: SamplerConfig, reader):
        self.config = config
        self.run_id = uuid.uuid4().hex[:12]
        self._reader = reader
        self._samples: list[ResourceSample] = []
        self._stop = threading.Event()
        self._stopped = False
        self._spool = None
        self._last_flush = 0.0
        self._period = 1.0 / config.rate_hz
        self._prev_busy, _ = reader.read()
        self._t0 = time.monotonic()
        self._prev_t = 0.0
        if config.spool_path is not None:
            header = {
                "run_id": self.run_id,
                "device": self.device,
                "nominal_rate_hz": config.rate_hz,
            }
            self._spool = open(config.spool_path, "w")
            self._spool.write("# " + json.dumps(header) + "\n")
        self._thread = threading.Thread(
            target=self._loop, name="cpulab-sampler", daemon=True
        )
        self._thread.start()

    @property
    def device(self) -> str:
        return self.config.device or default_device_label()

    @property
    def t0_monotonic(self) -> float:
        return self._t0

    def elapsed(self) -> float:
        """Seconds since the sampling epoch (shared by all recorded times)."""
        return time.monotonic() - self._t0

    def watch(self, pid: int) -> None:
        """Register a child pid explicitly (process-tree scope only)."""
        if hasattr(self._reader, "watch"):
            self._reader.watch(pid)

    def _take_sample(self) -> None:
        t = time.monotonic() - self._t0
        busy, ram = self._reader.read()
        dt = t - self._prev_t
        if dt <= 0:
            return
        pct = 100.0 * max(0.0, busy - self._prev_busy) / (dt * self._reader.ncpu)
        self._prev_busy, self._prev_t = busy, t
        sample = ResourceSample(t=t, cpu_pct=min(100.0, pct), ram_mb=ram)
        self._samples.append(sample)
        if self._spool is not None:
            self._spool.write(f"{sample.t!r} {sample.cpu_pct!r} {sample.ram_mb!r}\n")
            # flush about once a second: crash durability without paying a
            # write syscall on every tick
            if t - self._last_flush >= 1.0:
                self._spool.flush()
                self._last_flush = t

    def _loop(self) -> None:
        # tick regularity matters more than fairness: a delayed tick makes
        # the sample grid irregular and biases the trapezoid under load, so
        # raise this thread's priority when the OS lets us
        try:
            os.setpriority(os.PRIO_PROCESS, threading.get_native_id(), -10)
        except (AttributeError, OSError):
            pass
        tick = 1
        while True:
            target = self._t0 + tick * self._period
            delay = target - time.monotonic()
            if self._stop.wait(max(0.0, delay)):
                return
            self._take_sample()
            # skip missed ticks instead of back-filling them
            behind = time.monotonic() - self._t0
            tick = max(tick + 1, math.floor(behind / self._period) + 1)

    def stop(self) -> tuple[ResourceTrace, EnergyTrace | None]:
        """Halt collection and return the completed trace(s).

        A final sample is taken at stop time so even an immediate
        start/stop yields a nonempty trace. Raises StateError on a second
        stop.
        """
        if self._stopped:
            raise StateError("sampler already stopped")
        self._stopped = True
        self._stop.set()
        self._thread.join(timeout=5.0)
        self._take_sample()
        if self._spool is not None:
            self._spool.close()
        trace = ResourceTrace(
            samples=tuple(self._samples),
            nominal_rate_hz=self.config.rate_hz,
            device=self.device,
            run_id=self.run_id,
        )
        energy = None
        if self.config.energy_source is not None:
            energy = load_energy_trace(
                self.config.energy_source,
                time_offset=self.config.energy_time_offset,
            )
            energy = EnergyTrace(
                samples=energy.samples,
                nominal_rate_hz=energy.nominal_rate_hz,
                run_id=self.run_id,
            )
        return trace, energy


def start_sampling(config: SamplerConfig) -> SamplerHandle:
    """Begin background collection; the first sample lands within one period.

    Raises:
        NotFoundError: process-tree scope names a pid that does not exist.
        CapabilityError: system scope on a platform whose aggregate
            counters do not advance.
    """
    _apply_procfs_override()
    if config.scope == "backend":
        raise InputError(
            "scope='backend' must be resolved to a pid by the run orchestrator"
        )
    if config.scope == "system":
        reader = _SystemReader()
    else:
        reader = _ProcessTreeReader(int(config.scope), config.child_refresh_s)
    reader.probe()
    return SamplerHandle(config, reader)


def stop_sampling(handle: SamplerHandle) -> tuple[ResourceTrace, EnergyTrace | None]:
    return handle.stop()


def system_counters_available() -> bool:
    """Whether whole-system CPU accounting works on this host."""
    try:
        _SystemReader().probe()
        return True
    except CapabilityError:
        return False
