"""Handcrafted frame-level distortion descriptors.

Seven measurements per frame, in this fixed order: blur, noise, blockiness,
mean exposure, over-/under-exposed pixel fractions, and colorfulness.  All
but colorfulness operate on the luma plane.  Each formula is closed-form so
it can be verified by brute force on small synthetic images:

* blur: mean of the top 1% of maximum local variation (max absolute
  difference to the 8-neighborhood); sharp edges push it up, blur pulls
  it down.
* noise: median absolute response to a 3x3 Laplacian-difference kernel,
  rescaled by the kernel's response to unit-variance noise.
* blockiness: average luma step across 8-pixel grid boundaries minus the
  average step elsewhere.
* exposure: global mean plus the fractions of near-saturated and
  near-black pixels.
* colorfulness: opponent-axis statistic sqrt(var_rg + var_yb) +
  0.3 sqrt(mean_rg^2 + mean_yb^2).

Everything is normalized by 255 so descriptors live on a unit-ish scale.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .media import Frame, LumaPlane, to_luma

N_DISTORTION = 7

_NOISE_KERNEL = np.array([[1, -2, 1], [-2, 4, -2], [1, -2, 1]], dtype=np.float64)
# Response std of the kernel on unit noise is sqrt(sum of squares) = 6;
# 0.6745 converts a Gaussian MAD to a standard deviation.
_NOISE_SCALE = 0.6745 * 6.0
_BLOCK_PERIOD = 8
_OVEREXPOSED_LEVEL = 250
_UNDEREXPOSED_LEVEL = 5


@dataclass(frozen=True)
class DistortionVector:
    """The 7-entry handcrafted distortion descriptor of one frame."""

    blur: float
    noise_sigma: float
    blockiness: float
    exposure_mean: float
    over_exposed_frac: float
    under_exposed_frac: float
    colorfulness: float

    def as_array(self) -> np.ndarray:
        return np.array(
            [
                self.blur,
                self.noise_sigma,
                self.blockiness,
                self.exposure_mean,
                self.over_exposed_frac,
                self.under_exposed_frac,
                self.colorfulness,
            ],
            dtype=np.float64,
        )


def _require_min_size(plane: LumaPlane, side: int, op: str) -> None:
    if plane.width < side or plane.height < side:
        raise ValueError(f"{op} requires at least {side}x{side}, got "
                         f"{plane.width}x{plane.height}")


def blur_score(plane: LumaPlane) -> float:
    """Mean of the largest 1% of max-local-variation values, over 255.

    Lower means blurrier; a hard step edge scores 1.0.
    """
    _require_min_size(plane, 3, "blur_score")
    y = plane.y.astype(np.float64)
    center = y[1:-1, 1:-1]
    mlv = np.zeros_like(center)
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if dy == 0 and dx == 0:
                continue
            shifted = y[1 + dy:y.shape[0] - 1 + dy, 1 + dx:y.shape[1] - 1 + dx]
            np.maximum(mlv, np.abs(center - shifted), out=mlv)
    flat = np.sort(mlv, axis=None)
    k = max(1, int(np.ceil(flat.size / 100)))
    return float(flat[-k:].mean() / 255.0)


def noise_sigma(plane: LumaPlane) -> float:
    """Median-based noise standard deviation estimate, over 255.

    Overestimates on strongly textured content (checkerboards); exact on
    flat regions.
    """
    _require_min_size(plane, 3, "noise_sigma")
    y = plane.y.astype(np.float64)
    response = np.zeros((plane.height - 2, plane.width - 2))
    for dy in range(3):
        for dx in range(3):
            response += _NOISE_KERNEL[dy, dx] * y[
                dy:plane.height - 2 + dy, dx:plane.width - 2 + dx
            ]
    sigma = float(np.median(np.abs(response))) / _NOISE_SCALE
    return sigma / 255.0


def blockiness(plane: LumaPlane) -> float:
    """Excess luma discontinuity on the 8x8 grid versus elsewhere, over 255."""
    _require_min_size(plane, 17, "blockiness")
    y = plane.y.astype(np.float64)
    d_h = np.abs(np.diff(y, axis=1))  # d_h[:, j] = |Y(i, j+1) - Y(i, j)|
    d_v = np.abs(np.diff(y, axis=0))
    cols = np.arange(d_h.shape[1])
    rows = np.arange(d_v.shape[0])
    col_boundary = (cols + 1) % _BLOCK_PERIOD == 0
    row_boundary = (rows + 1) % _BLOCK_PERIOD == 0
    b_h = float(d_h[:, col_boundary].mean())
    e_h = float(d_h[:, ~col_boundary].mean())
    b_v = float(d_v[row_boundary, :].mean())
    e_v = float(d_v[~row_boundary, :].mean())
    return max(0.0, (b_h - e_h + b_v - e_v) / 2.0) / 255.0


def exposure_stats(plane: LumaPlane) -> tuple[float, float, float]:
    """(mean luma / 255, fraction >= 250, fraction <= 5)."""
    y = plane.y
    mean = float(y.mean()) / 255.0
    over = float(np.count_nonzero(y >= _OVEREXPOSED_LEVEL)) / y.size
    under = float(np.count_nonzero(y <= _UNDEREXPOSED_LEVEL)) / y.size
    return mean, over, under


def colorfulness(frame: Frame) -> float:
    """Opponent-color statistic (population variance), over 255.

    Exactly 0 for any gray frame.
    """
    rgb = frame.rgb.astype(np.float64)
    rg = rgb[..., 0] - rgb[..., 1]
    yb = 0.5 * (rgb[..., 0] + rgb[..., 1]) - rgb[..., 2]
    spread = np.sqrt(rg.var() + yb.var())
    offset = np.sqrt(rg.mean() ** 2 + yb.mean() ** 2)
    return float(spread + 0.3 * offset) / 255.0


def distortion_vector(frame: Frame) -> DistortionVector:
    """Assemble all 7 descriptors for one frame."""
    plane = to_luma(frame)
    exposure_mean, over_frac, under_frac = exposure_stats(plane)
    return DistortionVector(
        blur=blur_score(plane),
        noise_sigma=noise_sigma(plane),
        blockiness=blockiness(plane),
        exposure_mean=exposure_mean,
        over_exposed_frac=over_frac,
        under_exposed_frac=under_frac,
        colorfulness=colorfulness(frame),
    )
