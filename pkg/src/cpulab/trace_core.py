"""Value types for resource/energy traces and the integration arithmetic.

Everything here is an immutable value plus pure functions; traces can be
shared freely across threads. The central quantity is the area under the
utilization curve above an idle baseline (units %·s for CPU, MB·s for RAM),
computed with the trapezoidal rule on the sample grid. Energy follows the
same scheme on the (t, watts) trace of an external power meter.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import InputError, InsufficientDataError, OutOfRangeError

_trapezoid = getattr(np, "trapezoid", None) or np.trapz

WH_PER_WATT_SECOND = 1.0 / 3600.0


@dataclass(frozen=True)
class ResourceSample:
    """One (time, CPU %, RAM MB) reading.

    ``cpu_pct`` is percent of total machine capacity (all cores summed and
    divided by the core count), so values are comparable across machines
    with different core counts. ``t`` is seconds since run start.
    """

    t: float
    cpu_pct: float
    ram_mb: float

    def __post_init__(self):
        if not 0.0 <= self.cpu_pct <= 100.0:
            raise InputError(f"cpu_pct must be in [0, 100], got {self.cpu_pct}")
        if self.ram_mb < 0:
            raise InputError(f"ram_mb must be >= 0, got {self.ram_mb}")
        if self.t < 0:
            raise InputError(f"t must be >= 0, got {self.t}")


@dataclass(frozen=True)
class ResourceTrace:
    """Ordered resource samples for one run."""

    samples: tuple[ResourceSample, ...]
    nominal_rate_hz: float = 5.0
    device: str = ""
    run_id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "samples", tuple(self.samples))
        ts = [s.t for s in self.samples]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise InputError("sample timestamps must be strictly increasing")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.samples], dtype=float)

    @property
    def cpu(self) -> np.ndarray:
        return np.array([s.cpu_pct for s in self.samples], dtype=float)

    @property
    def ram(self) -> np.ndarray:
        return np.array([s.ram_mb for s in self.samples], dtype=float)

    @property
    def duration_s(self) -> float:
        if len(self.samples) < 2:
            return 0.0
        return self.samples[-1].t - self.samples[0].t

    def median_gap_s(self) -> float:
        if len(self.samples) < 2:
            return float("nan")
        return float(np.median(np.diff(self.times)))

    def check_rate(self, tolerance: float = 0.5) -> bool:
        """True when the median inter-sample gap is within ``tolerance``
        (fractional) of the nominal period."""
        gap = self.median_gap_s()
        if not np.isfinite(gap):
            return False
        period = 1.0 / self.nominal_rate_hz
        return abs(gap - period) <= tolerance * period


@dataclass(frozen=True)
class IdleBaseline:
    """Resting CPU/RAM level, estimated from a quiet span of the trace.

    ``dispersion`` is the standard deviation of the CPU channel over the
    estimation window; window detection uses it for hysteresis bands.
    """

    cpu_pct: float
    ram_mb: float
    n_samples: int
    dispersion: float


@dataclass(frozen=True)
class InferenceWindow:
    """Interval [start_t, end_t] during which one prompt's inference ran."""

    start_t: float
    end_t: float
    prompt_id: str = ""

    def __post_init__(self):
        if not self.end_t > self.start_t:
            raise InputError(
                f"window must have end_t > start_t, got [{self.start_t}, {self.end_t}]"
            )

    @property
    def duration_s(self) -> float:
        return self.end_t - self.start_t


@dataclass(frozen=True)
class AucMetrics:
    """Integrated cost figures for one prompt."""

    cpu_auc: float  # %·s above baseline
    ram_auc: float  # MB·s above baseline
    duration_s: float
    tokens_in: int = 0
    tokens_out: int = 0
    throughput_tps: float = 0.0

    def __post_init__(self):
        if self.cpu_auc < 0 or self.ram_auc < 0:
            raise InputError("AUC values must be nonnegative")
        if self.duration_s <= 0:
            raise InputError("duration_s must be positive")


@dataclass(frozen=True)
class PowerSample:
    t: float
    watts: float

    def __post_init__(self):
        if self.watts < 0:
            raise InputError(f"watts must be >= 0, got {self.watts}")


@dataclass(frozen=True)
class EnergyTrace:
    """Ordered power-meter samples, nominally 1 Hz."""

    samples: tuple[PowerSample, ...]
    nominal_rate_hz: float = 1.0
    run_id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "samples", tuple(self.samples))
        ts = [s.t for s in self.samples]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise InputError("power sample timestamps must be strictly increasing")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.samples], dtype=float)

    @property
    def watts(self) -> np.ndarray:
        return np.array([s.watts for s in self.samples], dtype=float)


@dataclass(frozen=True)
class WindowEnergy:
    """Energy figures for a single window.

    ``wh_integrated`` is the trapezoidal integral of power; ``wh_max_bound``
    is max power over the window times duration, the upper bound commonly
    quoted by coarse meter readouts. Both are reported side by side.
    """

    wh_integrated: float
    wh_max_bound: float
    max_power_w: float
    mean_power_w: float
    duration_s: float


@dataclass(frozen=True)
class EnergyMetrics:
    """Run-level energy summary: worst prompt, whole-run total, peak power."""

    wh_per_prompt: float
    wh_per_run: float
    max_power_w: float

    def __post_init__(self):
        if self.wh_per_prompt > self.wh_per_run + 1e-12:
            raise InputError("wh_per_prompt cannot exceed wh_per_run")


# ---------------------------------------------------------------------------
# Integration


def _trapezoid_between(t: np.ndarray, v: np.ndarray, start: float, end: float) -> float:
    """Trapezoidal integral of the piecewise-linear signal (t, v) over
    [start, end], linearly interpolating the values at the interval edges.

    Additive across adjacent intervals by construction: the edge value at a
    shared boundary is the same interpolated number on both sides.
    """
    i0 = int(np.searchsorted(t, start, side="right"))
    i1 = int(np.searchsorted(t, end, side="left"))
    ts = np.concatenate(([start], t[i0:i1], [end]))
    vs = np.concatenate(
        ([np.interp(start, t, v)], v[i0:i1], [np.interp(end, t, v)])
    )
    return float(_trapezoid(vs, ts))


def auc_above_baseline(
    trace: ResourceTrace, window: InferenceWindow, baseline: IdleBaseline
) -> tuple[float, float]:
    """Integrate CPU and RAM usage above the idle baseline over a window.

    The per-sample excess max(signal - baseline, 0) is formed first, then
    integrated with the trapezoidal rule; dips below baseline therefore
    never contribute negative area.

    Returns:
        (cpu_auc, ram_auc) in %·s and MB·s.

    Raises:
        OutOfRangeError: the window is not contained in the trace span.
        InsufficientDataError: fewer than 2 samples fall inside the window.
    """
    if len(trace) < 2:
        raise InsufficientDataError("trace has fewer than 2 samples")
    t = trace.times
    if window.start_t < t[0] or window.end_t > t[-1]:
        raise OutOfRangeError(
            f"window [{window.start_t}, {window.end_t}] outside trace span "
            f"[{t[0]}, {t[-1]}]"
        )
    inside = int(np.sum((t >= window.start_t) & (t <= window.end_t)))
    if inside < 2:
        raise InsufficientDataError(
            f"only {inside} samples inside window; need at least 2"
        )
    cpu_excess = np.maximum(trace.cpu - baseline.cpu_pct, 0.0)
    ram_excess = np.maximum(trace.ram - baseline.ram_mb, 0.0)
    cpu_auc = _trapezoid_between(t, cpu_excess, window.start_t, window.end_t)
    ram_auc = _trapezoid_between(t, ram_excess, window.start_t, window.end_t)
    return cpu_auc, ram_auc


def energy_for_window(energy: EnergyTrace, window: InferenceWindow) -> float:
    """Watt-hours consumed during a window, by trapezoidal integration.

    Window edges falling between meter samples use linearly interpolated
    power. If the window extends past the trace, the integral covers the
    overlapping span only.

    Raises:
        OutOfRangeError: the energy trace does not overlap the window.
    """
    if len(energy) == 0:
        raise OutOfRangeError("energy trace is empty")
    t = energy.times
    lo = max(window.start_t, float(t[0]))
    hi = min(window.end_t, float(t[-1]))
    if hi <= lo:
        raise OutOfRangeError(
            f"energy trace [{t[0]}, {t[-1]}] does not overlap window "
            f"[{window.start_t}, {window.end_t}]"
        )
    joules = _trapezoid_between(t, energy.watts, lo, hi)
    return joules * WH_PER_WATT_SECOND


def window_energy(energy: EnergyTrace, window: InferenceWindow) -> WindowEnergy:
    """Integrated and max-bound energy for one window."""
    wh = energy_for_window(energy, window)
    t = energy.times
    w = energy.watts
    lo = max(window.start_t, float(t[0]))
    hi = min(window.end_t, float(t[-1]))
    mask = (t >= lo) & (t <= hi)
    candidates = [float(np.interp(lo, t, w)), float(np.interp(hi, t, w))]
    if mask.any():
        candidates.append(float(w[mask].max()))
    max_power = max(candidates)
    duration = window.duration_s
    mean_power = wh / WH_PER_WATT_SECOND / (hi - lo) if hi > lo else 0.0
    return WindowEnergy(
        wh_integrated=wh,
        wh_max_bound=max_power * duration * WH_PER_WATT_SECOND,
        max_power_w=max_power,
        mean_power_w=mean_power,
        duration_s=duration,
    )


def aggregate_energy(per_window: Sequence[WindowEnergy], use_bound: bool = True) -> EnergyMetrics:
    """Fold per-window energy into the run-level summary.

    ``wh_per_prompt`` is the maximum over windows and ``wh_per_run`` the sum,
    using the max-bound figures by default (set ``use_bound=False`` for the
    integrated ones).
    """
    if not per_window:
        raise InsufficientDataError("no windows to aggregate")
    vals = [w.wh_max_bound if use_bound else w.wh_integrated for w in per_window]
    return EnergyMetrics(
        wh_per_prompt=max(vals),
        wh_per_run=sum(vals),
        max_power_w=max(w.max_power_w for w in per_window),
    )


def throughput(tokens_out: int, window: InferenceWindow) -> float:
    """Decode throughput in tokens per second over the window duration."""
    if tokens_out < 0:
        raise InputError(f"tokens_out must be >= 0, got {tokens_out}")
    duration = window.end_t - window.start_t
    if duration <= 0:
        raise OutOfRangeError("window has nonpositive duration")
    return tokens_out / duration


def auc_metrics(
    trace: ResourceTrace,
    window: InferenceWindow,
    baseline: IdleBaseline,
    tokens_in: int = 0,
    tokens_out: int = 0,
) -> AucMetrics:
    """Bundle the integrated metrics for one window."""
    cpu_auc, ram_auc = auc_above_baseline(trace, window, baseline)
    return AucMetrics(
        cpu_auc=cpu_auc,
        ram_auc=ram_auc,
        duration_s=window.duration_s,
        tokens_in=tokens_in,
        tokens_out=tokens_out,
        throughput_tps=throughput(tokens_out, window),
    )


# ---------------------------------------------------------------------------
# Serialization: newline-delimited records with a JSON header comment.
#
# Resource traces:   "# {json header}" then "t cpu_pct ram_mb" per line.
# Energy traces:     "# {json header}" then "t watts" per line; plain
#                    header-less meter logs are accepted on load.


def save_resource_trace(trace: ResourceTrace, path: str | Path) -> None:
    path = Path(path)
    header = {
        "run_id": trace.run_id,
        "device": trace.device,
        "nominal_rate_hz": trace.nominal_rate_hz,
    }
    with path.open("w") as fh:
        fh.write("# " + json.dumps(header) + "\n")
        for s in trace.samples:
            fh.write(f"{s.t!r} {s.cpu_pct!r} {s.ram_mb!r}\n")


def load_resource_trace(path: str | Path) -> ResourceTrace:
    path = Path(path)
    header: dict = {}
    samples: list[ResourceSample] = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            body = line.lstrip("#").strip()
            if body.startswith("{"):
                header = json.loads(body)
            continue
        parts = line.split()
        if len(parts) != 3:
            raise InputError(f"{path}:{lineno}: expected 't cpu_pct ram_mb'")
        t, cpu, ram = (float(p) for p in parts)
        samples.append(ResourceSample(t=t, cpu_pct=cpu, ram_mb=ram))
    return ResourceTrace(
        samples=tuple(samples),
        nominal_rate_hz=float(header.get("nominal_rate_hz", 5.0)),
        device=str(header.get("device", "")),
        run_id=str(header.get("run_id", "")),
    )


def save_energy_trace(trace: EnergyTrace, path: str | Path) -> None:
    path = Path(path)
    header = {"run_id": trace.run_id, "nominal_rate_hz": trace.nominal_rate_hz}
    with path.open("w") as fh:
        fh.write("# " + json.dumps(header) + "\n")
        for s in trace.samples:
            fh.write(f"{s.t!r} {s.watts!r}\n")


def load_energy_trace(path: str | Path, time_offset: float = 0.0) -> EnergyTrace:
    """Read a power-meter log: one ``t_seconds watts`` pair per line.

    Comment lines (leading ``#``) are skipped; a JSON header comment, when
    present, supplies run_id and nominal rate. ``time_offset`` is subtracted
    from every timestamp to align meter logs onto the run-start epoch.
    """
    path = Path(path)
    header: dict = {}
    samples: list[PowerSample] = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            body = line.lstrip("#").strip()
            if body.startswith("{"):
                header = json.loads(body)
            continue
        parts = line.split()
        if len(parts) != 2:
            raise InputError(f"{path}:{lineno}: expected 't watts'")
        samples.append(PowerSample(t=float(parts[0]) - time_offset, watts=float(parts[1])))
    return EnergyTrace(
        samples=tuple(samples),
        nominal_rate_hz=float(header.get("nominal_rate_hz", 1.0)),
        run_id=str(header.get("run_id", "")),
    )
