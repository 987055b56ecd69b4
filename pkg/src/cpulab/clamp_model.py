"""Resize-and-clamp preprocessing operator and the piecewise compute model.

Vision runtimes bound incoming images to a maximum width×height before the
model ever sees them. Above that bound every input is downscaled onto the
same pixel budget, so compute is flat; below it, compute tracks the actual
(effective) pixel count. This module implements the operator, the pixel
accounting, and prediction against a fitted flat-then-affine model.

Deliberately dependency-free: the mock backend subprocess imports it at
startup and must stay cheap to launch.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

from .errors import InputError, StateError


@dataclass(frozen=True)
class Resolution:
    """Image size in pixels."""

    width: int
    height: int

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise InputError(f"resolution must be >= 1x1, got {self.width}x{self.height}")

    @property
    def pixels(self) -> int:
        return self.width * self.height

    def __str__(self) -> str:
        return f"{self.width}x{self.height}"

    @classmethod
    def parse(cls, text: str) -> "Resolution":
        try:
            w, h = text.lower().split("x")
            return cls(int(w), int(h))
        except (ValueError, AttributeError) as exc:
            raise InputError(f"expected WIDTHxHEIGHT, got {text!r}") from exc


@dataclass(frozen=True)
class ClampSpec:
    """Maximum width/height bound applied by the preprocessing stage."""

    max_w: int
    max_h: int

    def __post_init__(self):
        if self.max_w < 1 or self.max_h < 1:
            raise InputError(f"clamp must be >= 1x1, got {self.max_w}x{self.max_h}")

    @property
    def pixels(self) -> int:
        return self.max_w * self.max_h

    def __str__(self) -> str:
        return f"{self.max_w}x{self.max_h}"

    @classmethod
    def parse(cls, text: str) -> "ClampSpec":
        r = Resolution.parse(text)
        return cls(r.width, r.height)


def apply_clamp(r: Resolution, clamp: ClampSpec) -> Resolution:
    """Map a nominal resolution to the effective one reaching the model.

    Uniform, aspect-preserving downscale by s = min(1, max_w/w, max_h/h)
    with floor rounding; the identity whenever the input already fits.
    Exact rational arithmetic avoids off-by-one floors near the bound.
    Dimensions are pinned to >= 1 so extreme aspect ratios stay valid.
    """
    if r.width <= clamp.max_w and r.height <= clamp.max_h:
        return r
    s = min(
        Fraction(1),
        Fraction(clamp.max_w, r.width),
        Fraction(clamp.max_h, r.height),
    )
    return Resolution(
        width=max(1, int(s * r.width)),
        height=max(1, int(s * r.height)),
    )


def effective_pixels(u: Resolution) -> int:
    """Pixel count of an (effective) resolution."""
    return u.pixels


@dataclass(frozen=True)
class PiecewiseFlatAffine:
    """Flat level at/above a pixel knee, affine in pixels below it."""

    knee_pixels: float
    flat_level: float
    intercept: float
    slope: float

    def __call__(self, pixels: float) -> float:
        if pixels >= self.knee_pixels:
            return self.flat_level
        return self.intercept + self.slope * pixels


@dataclass(frozen=True)
class ClampComputeModel:
    """Fitted cost model over effective pixels.

    ``compute`` maps effective pixels to predicted AUC; ``throughput``
    optionally maps them to predicted tokens/s (flat above the knee,
    rising as the pixel budget shrinks).
    """

    compute: PiecewiseFlatAffine
    throughput: PiecewiseFlatAffine | None = None

    @property
    def c_flat(self) -> float:
        return self.compute.flat_level

    @property
    def below_knee(self) -> tuple[float, float]:
        return self.compute.intercept, self.compute.slope


def predict_compute(
    r: Resolution, clamp: ClampSpec, model: ClampComputeModel | None
) -> float:
    """Predicted AUC for a nominal resolution under a given clamp."""
    if model is None:
        raise StateError("compute model has not been fitted")
    u = apply_clamp(r, clamp)
    return model.compute(effective_pixels(u))


def predict_throughput(
    r: Resolution, clamp: ClampSpec, model: ClampComputeModel | None
) -> float:
    """Predicted tokens/s for a nominal resolution under a given clamp."""
    if model is None or model.throughput is None:
        raise StateError("throughput model has not been fitted")
    u = apply_clamp(r, clamp)
    return model.throughput(effective_pixels(u))
