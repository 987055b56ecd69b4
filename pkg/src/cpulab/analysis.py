"""Scaling-law fits and compression-comparison statistics.

Two curve families matter here: cost that is affine in input tokens, and
cost that is flat above a pixel knee and affine below it. Fitting the first
is plain least squares; the second is an exhaustive changepoint search over
the observed grid (a few dozen points, so O(n^2) is irrelevant).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .clamp_model import ClampComputeModel, ClampSpec, PiecewiseFlatAffine
from .errors import DegenerateInputError, InsufficientDataError, MismatchError


@dataclass(frozen=True)
class LinearFit:
    """Affine fit y = a·x + b with its coefficient of determination."""

    a: float
    b: float
    r2: float
    n: int
    residuals: tuple[float, ...] = field(default=(), repr=False)

    def predict(self, x: float) -> float:
        return self.a * x + self.b


def _as_xy(points: Iterable[tuple[float, float]]) -> tuple[np.ndarray, np.ndarray]:
    pts = list(points)
    if not pts:
        raise InsufficientDataError("no points to fit")
    arr = np.asarray(pts, dtype=float)
    return arr[:, 0], arr[:, 1]


def _ols(x: np.ndarray, y: np.ndarray) -> tuple[float, float, np.ndarray]:
    design = np.column_stack([x, np.ones_like(x)])
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    a, b = float(coef[0]), float(coef[1])
    return a, b, y - (a * x + b)


def _r2(y: np.ndarray, residuals: np.ndarray) -> float:
    ss_res = float(np.sum(residuals**2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0.0:
        return 1.0
    return max(0.0, 1.0 - ss_res / ss_tot)


def fit_linear(
    points: Iterable[tuple[float, float]], method: str = "ols"
) -> LinearFit:
    """Fit y = a·x + b.

    ``method`` is "ols" (default) or "theil-sen" for hardware data with
    heavy-tailed noise. Residuals are kept on the fit for diagnostics.

    Raises:
        InsufficientDataError: fewer than 2 points.
        DegenerateInputError: all x values identical.
    """
    x, y = _as_xy(points)
    if len(x) < 2:
        raise InsufficientDataError(f"need >= 2 points, got {len(x)}")
    if np.all(x == x[0]):
        raise DegenerateInputError("all x values are equal; slope is undefined")
    if method == "ols":
        a, b, resid = _ols(x, y)
    elif method == "theil-sen":
        from scipy.stats import theilslopes

        a, b, *_ = theilslopes(y, x)
        a, b = float(a), float(b)
        resid = y - (a * x + b)
    else:
        raise ValueError(f"unknown fit method {method!r}")
    return LinearFit(a=a, b=b, r2=_r2(y, resid), n=len(x), residuals=tuple(resid))


@dataclass(frozen=True)
class KneeFit:
    """Changepoint fit: constant level above the knee, affine below.

    ``knee_pixels`` is the estimated changepoint: the crossover of the two
    fitted branches, confined to the grid interval straddling the best
    split (the first flat grid point when no crossover exists).
    ``confident`` is False when the piecewise model barely improves on a
    single line (no visible flat segment); ``hint_offset_steps`` is the
    signed grid distance between the split and the expected knee when a
    clamp hint was supplied.
    """

    knee_pixels: float
    c_flat: float
    below_intercept: float
    below_slope: float
    sse: float
    n: int
    n_flat: int
    confident: bool
    hint_offset_steps: int | None = None

    @property
    def below_fit(self) -> tuple[float, float]:
        return self.below_intercept, self.below_slope

    def to_model(self, clamp: ClampSpec | None = None) -> ClampComputeModel:
        """Prediction model from this fit.

        Fitted knees live on the nominal-pixel grid; predictions consume
        effective pixels. When the clamp that produced the data is known,
        the model's knee is anchored at its pixel count so every clamped
        input lands on the flat branch.
        """
        return ClampComputeModel(
            compute=PiecewiseFlatAffine(
                knee_pixels=float(clamp.pixels) if clamp else self.knee_pixels,
                flat_level=self.c_flat,
                intercept=self.below_intercept,
                slope=self.below_slope,
            )
        )


# A split must beat the single-line fit by this relative SSE margin to be
# reported as a confident knee.
KNEE_MIN_IMPROVEMENT = 0.25


def detect_knee(
    points: Iterable[tuple[float, float]], hint: ClampSpec | None = None
) -> KneeFit:
    """Locate the flat-then-affine changepoint in (pixels, AUC) data.

    Every grid position is tried as the first flat point; candidates are
    scored by the summed SSE of {affine fit below, constant fit above} and
    the minimum wins. Monotone data with no flat segment lands on the
    maximum pixel value with ``confident=False``.

    Raises:
        InsufficientDataError: fewer than 4 points.
    """
    x, y = _as_xy(points)
    order = np.argsort(x)
    x, y = x[order], y[order]
    n = len(x)
    if n < 4:
        raise InsufficientDataError(f"need >= 4 points for knee detection, got {n}")

    best: tuple[float, int] | None = None  # (sse, split index)
    for k in range(2, n):  # below: x[:k] (>=2 points), above: x[k:] (>=1)
        a, b, resid_below = _ols(x[:k], y[:k])
        sse_below = float(np.sum(resid_below**2))
        flat = float(np.mean(y[k:]))
        sse_above = float(np.sum((y[k:] - flat) ** 2))
        total = sse_below + sse_above
        if best is None or total < best[0] - 1e-15:
            best = (total, k)
    assert best is not None
    sse, k = best

    a, b, _ = _ols(x[:k], y[:k])
    c_flat = float(np.mean(y[k:]))

    # Refine the changepoint inside the straddling grid interval: where the
    # below-knee line meets the flat level. Exact for noiseless continuous
    # knees; under noise it pulls the estimate back toward the true corner.
    knee_x = float(x[k])
    if (n - k) >= 2 and a * (x[k] - x[k - 1]) > 1e-9 * max(abs(c_flat), 1.0):
        crossover = (c_flat - b) / a
        knee_x = float(min(max(crossover, x[k - 1]), x[k]))

    _, _, line_resid = _ols(x, y)
    line_sse = float(np.sum(line_resid**2))
    # a single line fitting essentially perfectly (flat or purely affine
    # data) means there is no knee to be confident about
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if line_sse <= 1e-12 * max(ss_tot, 1.0):
        improvement = 0.0
    else:
        improvement = 1.0 - sse / line_sse
    confident = improvement >= KNEE_MIN_IMPROVEMENT and (n - k) >= 2

    hint_offset: int | None = None
    if hint is not None:
        target = hint.pixels
        nearest = int(np.argmin(np.abs(x - target)))
        hint_offset = k - nearest

    return KneeFit(
        knee_pixels=knee_x,
        c_flat=c_flat,
        below_intercept=b,
        below_slope=a,
        sse=sse,
        n=n,
        n_flat=n - k,
        confident=confident,
        hint_offset_steps=hint_offset,
    )


@dataclass(frozen=True)
class ComparisonReport:
    """Matched-input comparison of a base model run against a compressed one.

    Reductions are (base - comp) / base · 100 per channel; ``speedup`` is
    the mean throughput ratio comp/base; ``wins`` counts inputs where the
    compressed model is strictly faster.
    """

    matched_keys: tuple[str, ...]
    per_input: dict[str, dict[str, float | None]]
    mean_reduction: dict[str, float | None]
    speedup: float
    wins: int
    n_inputs: int
    accuracy_delta_pp: float | None = None


_CHANNELS = ("cpu_auc", "ram_auc", "wh")


def _channel_value(record, channel: str) -> float | None:
    val = getattr(record, channel, None)
    if val is None and isinstance(record, Mapping):
        val = record.get(channel)
    return None if val is None else float(val)


def compare_models(
    base: Mapping[str, object],
    comp: Mapping[str, object],
    matched_on: str = "input_key",
    base_accuracy: float | None = None,
    comp_accuracy: float | None = None,
) -> ComparisonReport:
    """Compare two runs' metrics at matched input keys.

    ``base`` and ``comp`` map input keys to records exposing ``cpu_auc``,
    ``ram_auc``, ``throughput_tps`` and optionally ``wh`` (attributes or
    mapping keys). Keys present in only one run are ignored; fully disjoint
    key sets are an error. Mean accuracy scores in [0, 1], when supplied,
    yield the accuracy delta in percentage points.
    """
    keys = sorted(set(base) & set(comp), key=str)
    if not keys:
        raise MismatchError(
            f"runs share no {matched_on} values: "
            f"{sorted(map(str, base))[:5]} vs {sorted(map(str, comp))[:5]}"
        )

    per_input: dict[str, dict[str, float | None]] = {}
    sums: dict[str, list[float]] = {ch: [] for ch in _CHANNELS}
    ratios: list[float] = []
    wins = 0
    for key in keys:
        b, c = base[key], comp[key]
        row: dict[str, float | None] = {}
        for ch in _CHANNELS:
            bv, cv = _channel_value(b, ch), _channel_value(c, ch)
            if bv is None or cv is None or bv <= 0:
                row[ch] = None
            else:
                red = (bv - cv) / bv * 100.0
                row[ch] = red
                sums[ch].append(red)
        b_tps = _channel_value(b, "throughput_tps")
        c_tps = _channel_value(c, "throughput_tps")
        if b_tps and c_tps and b_tps > 0:
            ratios.append(c_tps / b_tps)
            if c_tps > b_tps:
                wins += 1
        per_input[str(key)] = row

    mean_reduction = {
        ch: (float(np.mean(v)) if v else None) for ch, v in sums.items()
    }
    speedup = float(np.mean(ratios)) if ratios else 1.0
    accuracy_delta = None
    if base_accuracy is not None and comp_accuracy is not None:
        accuracy_delta = (comp_accuracy - base_accuracy) * 100.0
    return ComparisonReport(
        matched_keys=tuple(str(k) for k in keys),
        per_input=per_input,
        mean_reduction=mean_reduction,
        speedup=speedup,
        wins=wins,
        n_inputs=len(keys),
        accuracy_delta_pp=accuracy_delta,
    )
