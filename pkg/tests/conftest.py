"""Shared synthetic-signal builders for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from cpulab.trace_core import (
    EnergyTrace,
    PowerSample,
    ResourceSample,
    ResourceTrace,
)


def make_trace(
    cpu: np.ndarray,
    rate_hz: float = 5.0,
    ram: np.ndarray | None = None,
    t0: float = 0.0,
) -> ResourceTrace:
    """Trace from a CPU% array on a uniform grid."""
    cpu = np.asarray(cpu, dtype=float)
    if ram is None:
        ram = np.full_like(cpu, 100.0)
    t = t0 + np.arange(len(cpu)) / rate_hz
    samples = tuple(
        ResourceSample(t=float(ti), cpu_pct=float(np.clip(ci, 0, 100)), ram_mb=float(ri))
        for ti, ci, ri in zip(t, cpu, ram)
    )
    return ResourceTrace(samples=samples, nominal_rate_hz=rate_hz)


def pulse_trace(
    rate_hz: float,
    duration_s: float,
    base_cpu: float,
    noise_sd: float,
    pulses: list[tuple[float, float, float]],
    seed: int = 0,
) -> tuple[ResourceTrace, list[tuple[float, float]]]:
    """Baseline + Gaussian noise + rectangular pulses (start, duration, amp).

    Returns the trace and the injected active intervals as ground truth.
    """
    rng = np.random.default_rng(seed)
    n = int(round(duration_s * rate_hz)) + 1
    t = np.arange(n) / rate_hz
    cpu = base_cpu + (noise_sd * rng.standard_normal(n) if noise_sd > 0 else 0.0)
    intervals = []
    for start, dur, amp in pulses:
        mask = (t >= start) & (t < start + dur)
        cpu = np.where(mask, cpu + amp, cpu)
        intervals.append((start, start + dur))
    ram = np.full(n, 100.0)
    samples = tuple(
        ResourceSample(t=float(ti), cpu_pct=float(np.clip(ci, 0, 100)), ram_mb=float(ri))
        for ti, ci, ri in zip(t, cpu, ram)
    )
    return ResourceTrace(samples=samples, nominal_rate_hz=rate_hz), intervals


def constant_power_trace(watts: float, duration_s: float, rate_hz: float = 1.0) -> EnergyTrace:
    n = int(round(duration_s * rate_hz)) + 2
    return EnergyTrace(
        samples=tuple(PowerSample(t=i / rate_hz, watts=watts) for i in range(n)),
        nominal_rate_hz=rate_hz,
    )


class SmoothSignal:
    """Random low-frequency signal with an analytic form, for oracle tests."""

    def __init__(self, rng: np.random.Generator, offset_range=(25.0, 40.0), max_freq=0.15):
        self.offset = rng.uniform(*offset_range)
        k = rng.integers(2, 5)
        raw_amps = rng.uniform(0.5, 3.0, size=k)
        budget = min(10.0, self.offset - 6.0)
        raw_amps *= budget / raw_amps.sum()
        self.amps = raw_amps
        self.freqs = rng.uniform(0.02, max_freq, size=k)
        self.phases = rng.uniform(0, 2 * np.pi, size=k)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        out = np.full_like(t, self.offset)
        for a, f, p in zip(self.amps, self.freqs, self.phases):
            out = out + a * np.sin(2 * np.pi * f * t + p)
        return out


@pytest.fixture
def rng():
    return np.random.default_rng(42)


@pytest.fixture(scope="session")
def source_image_2048(tmp_path_factory):
    """2048x1440 synthetic scene: twice the default clamp in each dimension,
    so a width sweep straddles every clamp under test."""
    from PIL import Image

    path = tmp_path_factory.mktemp("src") / "scene_2048x1440.png"
    rng = np.random.default_rng(7)
    noise = rng.integers(0, 255, size=(1440, 2048, 3), dtype=np.uint8)
    yy, xx = np.mgrid[0:1440, 0:2048]
    grad = ((xx * 255) // 2047).astype(np.uint8)
    arr = (noise // 2 + grad[..., None] // 2).astype(np.uint8)
    Image.fromarray(arr, "RGB").save(path, format="PNG")
    return path
