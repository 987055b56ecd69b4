"""Idle-baseline estimation and inference-window detection.

A window opens where the smoothed CPU signal rises fast while the raw level
sits clearly above baseline, and closes once the level has returned to the
baseline band and stayed there long enough. All thresholds are expressed
relative to the baseline and its dispersion, so detection is unchanged by
adding a constant to the whole signal.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InsufficientDataError
from .trace_core import IdleBaseline, InferenceWindow, ResourceTrace


@dataclass(frozen=True)
class DetectionParams:
    """Tunables for window detection.

    smooth_span: moving-average width in samples for the gradient signal.
    rise_threshold: minimum smoothed CPU derivative (%/s) to open a window.
    min_duration_s: windows shorter than this are discarded.
    min_gap_s: the level must stay inside the baseline band this long
        before a window actually closes; shorter dips are bridged.
    """

    smooth_span: int = 3
    rise_threshold: float = 5.0
    min_duration_s: float = 1.0
    min_gap_s: float = 2.0


def estimate_idle_baseline(
    trace: ResourceTrace, pre_window_s: float, end_t: float | None = None
) -> IdleBaseline:
    """Per-channel median over a quiet span preceding the workload.

    The span is the first ``pre_window_s`` seconds of the trace, or the
    ``pre_window_s`` seconds ending at ``end_t`` when the caller knows when
    the workload actually starts. The median rejects isolated spikes;
    dispersion is the CPU standard deviation over the same span.

    Raises:
        InsufficientDataError: fewer than 5 samples in the span.
    """
    t = trace.times
    if len(t) == 0:
        raise InsufficientDataError("empty trace")
    if end_t is None:
        lo, hi = t[0], t[0] + pre_window_s
    else:
        lo, hi = end_t - pre_window_s, end_t
    mask = (t >= lo) & (t <= hi)
    n = int(mask.sum())
    if n < 5:
        raise InsufficientDataError(
            f"only {n} samples in the {pre_window_s:.3g}s pre-window; need >= 5"
        )
    cpu = trace.cpu[mask]
    ram = trace.ram[mask]
    return IdleBaseline(
        cpu_pct=float(np.median(cpu)),
        ram_mb=float(np.median(ram)),
        n_samples=n,
        dispersion=float(np.std(cpu)),
    )


def _moving_average(v: np.ndarray, span: int) -> np.ndarray:
    """Centered moving average; the window shrinks near the edges."""
    if span <= 1 or len(v) < 2:
        return v.astype(float)
    kernel = np.ones(span)
    sums = np.convolve(v, kernel, mode="same")
    counts = np.convolve(np.ones_like(v), kernel, mode="same")
    return sums / counts


def _gradient(v: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Central-difference derivative (one-sided at the ends)."""
    return np.gradient(v, t)


def detect_inference_windows(
    trace: ResourceTrace,
    baseline: IdleBaseline,
    params: DetectionParams = DetectionParams(),
) -> list[InferenceWindow]:
    """Detect per-prompt activity intervals from the CPU signal.

    Opens where the smoothed derivative exceeds ``rise_threshold`` AND the
    raw level exceeds baseline + 3·dispersion; the start is backed up to
    the last at-baseline sample so pulse onsets are covered. Closes at the
    first sample back inside the band, confirmed only after ``min_gap_s``
    of quiet (earlier re-rises cancel the close). An empty list is a valid
    result.
    """
    n = len(trace)
    if n < 3:
        return []
    t = trace.times
    cpu = trace.cpu
    level = baseline.cpu_pct + 3.0 * baseline.dispersion
    smoothed = _moving_average(cpu, params.smooth_span)
    grad = _gradient(smoothed, t)

    windows: list[InferenceWindow] = []
    open_start: float | None = None
    pending_close: float | None = None

    def finalize(end_t: float) -> None:
        nonlocal open_start
        if open_start is not None and end_t - open_start >= params.min_duration_s:
            windows.append(
                InferenceWindow(
                    start_t=open_start,
                    end_t=end_t,
                    prompt_id=f"win{len(windows):03d}",
                )
            )
        open_start = None

    for i in range(n):
        if open_start is None:
            # the raw level keeps the sharp edge timing; the smoothed
            # gradient rejects single-sample noise
            if cpu[i] > level + 1e-12 and grad[i] > params.rise_threshold:
                j = i
                back_limit = max(0, i - params.smooth_span)
                while j > back_limit and cpu[j] > level + 1e-12:
                    j -= 1
                open_start = float(t[j])
                pending_close = None
        else:
            # in-window state tracks the smoothed level so an isolated
            # sampler blip neither holds a window open nor reopens it
            if smoothed[i] > level + 1e-12:
                pending_close = None
            else:
                if pending_close is None:
                    pending_close = float(t[i])
                elif t[i] - pending_close >= params.min_gap_s:
                    finalize(pending_close)
                    pending_close = None
    if open_start is not None:
        finalize(pending_close if pending_close is not None else float(t[-1]))

    return windows


def split_window_at_dip(
    trace: ResourceTrace,
    window: InferenceWindow,
    baseline: IdleBaseline,
    min_dip_s: float = 0.0,
) -> list[InferenceWindow]:
    """Best-effort split of one window at its longest interior quiet dip.

    Stateless CLI backends reload the model before inferring; when the two
    phases are separated by a visible lull in CPU, this cuts the window in
    two. Returns the original window when no qualifying dip exists.
    """
    t = trace.times
    cpu = trace.cpu
    level = baseline.cpu_pct + 3.0 * baseline.dispersion
    mask = (t > window.start_t) & (t < window.end_t)
    idx = np.nonzero(mask)[0]
    if len(idx) < 3:
        return [window]

    best: tuple[float, float, float] | None = None  # (length, start, end)
    run_start: float | None = None
    prev_t: float | None = None
    for i in idx:
        quiet = cpu[i] <= level + 1e-12
        if quiet and run_start is None:
            run_start = float(t[i])
        if not quiet and run_start is not None:
            length = float(prev_t) - run_start
            if length >= min_dip_s and (best is None or length > best[0]):
                best = (length, run_start, float(prev_t))
            run_start = None
        prev_t = t[i]
    if run_start is not None:
        length = float(prev_t) - run_start
        if length >= min_dip_s and (best is None or length > best[0]):
            best = (length, run_start, float(prev_t))

    if best is None or best[0] <= 0:
        return [window]
    _, dip_start, dip_end = best
    if dip_start <= window.start_t or dip_end >= window.end_t:
        return [window]
    return [
        InferenceWindow(window.start_t, dip_start, prompt_id=window.prompt_id + ".load"),
        InferenceWindow(dip_end, window.end_t, prompt_id=window.prompt_id + ".infer"),
    ]


def save_windows(windows: list[InferenceWindow], path: str | Path) -> None:
    """One ``prompt_id start_t end_t`` record per line."""
    path = Path(path)
    with path.open("w") as fh:
        for w in windows:
            fh.write(f"{w.prompt_id or '-'} {w.start_t!r} {w.end_t!r}\n")


def load_windows(path: str | Path) -> list[InferenceWindow]:
    out: list[InferenceWindow] = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        pid, start, end = line.split()
        out.append(
            InferenceWindow(
                start_t=float(start),
                end_t=float(end),
                prompt_id="" if pid == "-" else pid,
            )
        )
    return out
