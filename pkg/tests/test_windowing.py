"""Baseline estimation and window detection on synthetic traces."""

import numpy as np
import pytest

from cpulab.errors import InsufficientDataError
from cpulab.trace_core import IdleBaseline, InferenceWindow
from cpulab.windowing import (
    DetectionParams,
    detect_inference_windows,
    estimate_idle_baseline,
    load_windows,
    save_windows,
    split_window_at_dip,
)

from conftest import make_trace, pulse_trace

PARAMS = DetectionParams(smooth_span=3, rise_threshold=5.0, min_duration_s=1.0, min_gap_s=2.0)


class TestIdleBaseline:
    def test_constant_pre_window(self):
        trace = make_trace(np.full(30, 5.0))
        base = estimate_idle_baseline(trace, 2.0)
        assert base.cpu_pct == 5.0
        assert base.dispersion == 0.0

    def test_median_rejects_spike(self):
        trace = make_trace(np.array([5.0, 5.0, 5.0, 90.0, 5.0]))
        base = estimate_idle_baseline(trace, 1.0)
        assert base.cpu_pct == 5.0

    def test_median_concentration_with_noise(self, rng):
        cpu = 7.0 + 1.0 * rng.standard_normal(100)
        trace = make_trace(np.clip(cpu, 0, 100))
        base = estimate_idle_baseline(trace, 20.0)
        assert base.cpu_pct == pytest.approx(7.0, abs=0.5)
        # agree with the brute-force sorted-middle oracle
        vals = np.sort(trace.cpu)
        oracle = 0.5 * (vals[49] + vals[50])
        assert base.cpu_pct == pytest.approx(oracle, abs=1e-12)

    def test_too_few_samples(self):
        trace = make_trace(np.full(3, 5.0))
        with pytest.raises(InsufficientDataError):
            estimate_idle_baseline(trace, 0.4)

    def test_anchored_window(self):
        cpu = np.concatenate([np.full(10, 50.0), np.full(15, 5.0)])
        trace = make_trace(cpu)
        base = estimate_idle_baseline(trace, 2.0, end_t=4.8)
        assert base.cpu_pct == 5.0


class TestDetection:
    def test_flat_trace_yields_nothing(self):
        trace = make_trace(np.full(100, 5.0))
        base = estimate_idle_baseline(trace, 4.0)
        assert detect_inference_windows(trace, base, PARAMS) == []

    def test_square_pulse_edges(self):
        trace, _ = pulse_trace(5.0, 30.0, 5.0, 0.0, [(10.0, 10.0, 60.0)])
        base = estimate_idle_baseline(trace, 4.0)
        wins = detect_inference_windows(trace, base, PARAMS)
        assert len(wins) == 1
        assert wins[0].start_t == pytest.approx(10.0, abs=0.2 + 1e-9)
        assert wins[0].end_t == pytest.approx(20.0, abs=2 * 0.2 + 1e-9)

    def test_two_pulses_paired(self):
        trace, truth = pulse_trace(
            5.0, 40.0, 5.0, 0.0, [(8.0, 6.0, 50.0), (19.0, 8.0, 50.0)]
        )
        base = estimate_idle_baseline(trace, 4.0)
        wins = detect_inference_windows(trace, base, PARAMS)
        assert len(wins) == 2
        for win, (lo, hi) in zip(wins, truth):
            assert win.start_t == pytest.approx(lo, abs=0.21)
            assert win.end_t == pytest.approx(hi, abs=0.41)

    def test_short_blip_discarded(self):
        trace, _ = pulse_trace(5.0, 20.0, 5.0, 0.0, [(10.0, 0.4, 60.0)])
        base = estimate_idle_baseline(trace, 4.0)
        assert detect_inference_windows(trace, base, PARAMS) == []

    def test_close_gap_merges(self):
        # pulses separated by less than min_gap fuse into one window
        trace, _ = pulse_trace(5.0, 40.0, 5.0, 0.0, [(8.0, 4.0, 50.0), (13.0, 4.0, 50.0)])
        base = estimate_idle_baseline(trace, 4.0)
        wins = detect_inference_windows(trace, base, PARAMS)
        assert len(wins) == 1
        assert wins[0].start_t < 8.5 and wins[0].end_t > 16.5

    def test_windows_disjoint_and_long_enough(self, rng):
        for seed in range(10):
            pulses = []
            t = 6.0
            local = np.random.default_rng(seed)
            for _ in range(local.integers(1, 4)):
                dur = float(local.uniform(2.0, 5.0))
                pulses.append((t, dur, float(local.uniform(20, 60))))
                t += dur + float(local.uniform(3.0, 6.0))
            trace, _ = pulse_trace(5.0, t + 5.0, 5.0, 0.5, pulses, seed=seed)
            base = estimate_idle_baseline(trace, 4.0)
            wins = detect_inference_windows(trace, base, PARAMS)
            for a, b in zip(wins, wins[1:]):
                assert a.end_t <= b.start_t
            for w in wins:
                assert w.duration_s >= PARAMS.min_duration_s

    def test_shift_invariance(self):
        trace, _ = pulse_trace(5.0, 40.0, 5.0, 0.5, [(10.0, 6.0, 40.0)], seed=3)
        base = estimate_idle_baseline(trace, 4.0)
        wins = detect_inference_windows(trace, base, PARAMS)

        shifted = make_trace(trace.cpu + 20.0, rate_hz=5.0)
        shifted_base = IdleBaseline(
            cpu_pct=base.cpu_pct + 20.0,
            ram_mb=base.ram_mb,
            n_samples=base.n_samples,
            dispersion=base.dispersion,
        )
        shifted_wins = detect_inference_windows(shifted, shifted_base, PARAMS)
        assert [(w.start_t, w.end_t) for w in wins] == [
            (w.start_t, w.end_t) for w in shifted_wins
        ]

    def test_coverage_on_noisy_traces(self):
        # union of detected windows covers nearly all injected active time
        # and almost none of the idle time, at high SNR
        total_active = total_idle = covered_active = covered_idle = 0.0
        for seed in range(10):
            local = np.random.default_rng(100 + seed)
            pulses = []
            t = 8.0
            for _ in range(int(local.integers(1, 4))):
                dur = float(local.uniform(2.0, 6.0))
                pulses.append((t, dur, float(local.uniform(15, 50))))
                t += dur + float(local.uniform(4.0, 7.0))
            duration = t + 4.0
            trace, truth = pulse_trace(5.0, duration, 5.0, 0.6, pulses, seed=seed)
            base = estimate_idle_baseline(trace, 5.0)
            wins = detect_inference_windows(trace, base, PARAMS)
            grid = np.linspace(0, duration, 4000)
            active = np.zeros_like(grid, dtype=bool)
            for lo, hi in truth:
                active |= (grid >= lo) & (grid < hi)
            detected = np.zeros_like(grid, dtype=bool)
            for w in wins:
                detected |= (grid >= w.start_t) & (grid < w.end_t)
            dt = grid[1] - grid[0]
            total_active += active.sum() * dt
            total_idle += (~active).sum() * dt
            covered_active += (active & detected).sum() * dt
            covered_idle += ((~active) & detected).sum() * dt
        assert covered_active / total_active >= 0.95
        assert covered_idle / total_idle <= 0.05


class TestSplitAtDip:
    def test_splits_double_hump(self):
        cpu = np.full(120, 5.0)
        cpu[20:40] = 60.0   # load phase
        cpu[44:80] = 55.0   # inference phase, short dip between
        trace = make_trace(cpu)
        base = estimate_idle_baseline(trace, 3.0)
        win = InferenceWindow(float(trace.times[19]), float(trace.times[80]), "step0")
        parts = split_window_at_dip(trace, win, base)
        assert len(parts) == 2
        assert parts[0].prompt_id.endswith(".load")
        assert parts[1].prompt_id.endswith(".infer")
        assert parts[0].end_t <= parts[1].start_t

    def test_no_dip_returns_original(self):
        cpu = np.full(60, 5.0)
        cpu[10:50] = 60.0
        trace = make_trace(cpu)
        base = estimate_idle_baseline(trace, 1.5)
        win = InferenceWindow(2.0, 9.8, "w")
        assert split_window_at_dip(trace, win, base) == [win]


class TestWindowSerialization:
    def test_round_trip(self, tmp_path):
        wins = [InferenceWindow(1.0, 2.5, "p1"), InferenceWindow(4.0, 8.0, "")]
        path = tmp_path / "windows.txt"
        save_windows(wins, path)
        assert load_windows(path) == wins
