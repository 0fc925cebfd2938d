"""Image-quality metrics, correlation, joint sampling and curve fits."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .forward_model import make_rng

PSNR_CAP_DB = 100.0
SSIM_WINDOW = 7
SSIM_K1 = 0.01
SSIM_K2 = 0.03


class UndefinedCorrelation(ValueError):
    """Raised when a correlation is requested for a constant input."""


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def nmse(recon, reference) -> float:
    """||recon - reference||^2 / ||reference||^2."""
    recon, reference = _pair(recon, reference)
    denom = float(np.sum(reference**2))
    if denom == 0:
        raise ValueError("NMSE is undefined for an all-zero reference")
    return float(np.sum((recon - reference) ** 2)) / denom


def psnr(recon, reference) -> float:
    """PSNR in dB with the reference maximum as peak, capped at 100 dB."""
    recon, reference = _pair(recon, reference)
    peak = float(np.max(reference))
    mse = float(np.mean((recon - reference) ** 2))
    if mse < peak**2 * 1e-10 or mse == 0:
        return PSNR_CAP_DB
    return 10.0 * math.log10(peak**2 / mse)


def _ssim_map(x: np.ndarray, y: np.ndarray, data_range: float, win: int) -> np.ndarray:
    wx = sliding_window_view(x, (win, win))
    wy = sliding_window_view(y, (win, win))
    n = win * win
    mx, my = wx.mean(axis=(-2, -1)), wy.mean(axis=(-2, -1))
    # sample (n - 1) covariances, as in the fastMRI evaluation code
    cov = n / (n - 1)
    vx = (wx * wx).mean(axis=(-2, -1)) - mx * mx
    vy = (wy * wy).mean(axis=(-2, -1)) - my * my
    vxy = (wx * wy).mean(axis=(-2, -1)) - mx * my
    vx, vy, vxy = vx * cov, vy * cov, vxy * cov
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    return ((2 * mx * my + c1) * (2 * vxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))


def ssim(recon, reference, data_range: float | None = None, win: int = SSIM_WINDOW) -> float:
    """Mean SSIM over all fully contained ``win x win`` uniform windows.

    ``data_range`` defaults to the reference's max - min; pass it explicitly
    when symmetry in the two arguments matters.
    """
    recon, reference = _pair(recon, reference)
    if recon.ndim != 2 or min(recon.shape) < win:
        raise ValueError(f"SSIM needs 2D images of at least {win}x{win}")
    if data_range is None:
        data_range = float(np.max(reference) - np.min(reference))
    if data_range <= 0:
        raise ValueError("SSIM data range must be positive (constant reference?)")
    return float(np.mean(_ssim_map(recon, reference, data_range, win)))


def pearson(a, b) -> float:
    a, b = _pair(np.ravel(a), np.ravel(b))
    if a.size < 2:
        raise ValueError("correlation needs at least two values")
    da, db = a - a.mean(), b - b.mean()
    sa, sb = math.sqrt(float(da @ da)), math.sqrt(float(db @ db))
    if sa == 0 or sb == 0:
        raise UndefinedCorrelation("correlation is undefined for a constant input")
    return float(da @ db) / (sa * sb)


def sample_joint(map_a, map_b, n: int, seed: int, foreground=None) -> np.ndarray:
    """``n`` (a, b) value pairs at distinct, uniformly chosen pixels.

    Returns an ``(n, 4)`` array of ``row, col, a, b``.
    """
    map_a, map_b = _pair(map_a, map_b)
    allowed = np.ones(map_a.shape, bool) if foreground is None else np.asarray(foreground, bool)
    if allowed.shape != map_a.shape:
        raise ValueError("foreground mask must match the maps")
    flat = np.flatnonzero(allowed)
    if n > flat.size:
        raise ValueError(f"cannot draw {n} distinct pixels from {flat.size} candidates")
    chosen = make_rng(seed, stream=30).choice(flat, size=n, replace=False)
    r, c = np.unravel_index(chosen, map_a.shape)
    return np.column_stack([r, c, map_a[r, c], map_b[r, c]])


@dataclass(frozen=True)
class FitResult:
    model: str
    coefficients: tuple[float, float]
    r_squared: float

    def predict(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        p, q = self.coefficients
        if self.model == "linear":
            return p * x + q
        return p * np.exp(q * x)

    def to_dict(self) -> dict:
        names = ("slope", "intercept") if self.model == "linear" else ("scale", "rate")
        return {"model": self.model, **dict(zip(names, self.coefficients)), "r_squared": self.r_squared}


def _least_squares_line(x: np.ndarray, y: np.ndarray) -> tuple[float, float, float]:
    if x.size < 2:
        raise ValueError("fitting needs at least two points")
    xm, ym = x.mean(), y.mean()
    sxx = float(np.sum((x - xm) ** 2))
    if sxx == 0:
        raise ValueError("x values are all identical; slope is undefined")
    slope = float(np.sum((x - xm) * (y - ym))) / sxx
    intercept = float(ym - slope * xm)
    ss_tot = float(np.sum((y - ym) ** 2))
    ss_res = float(np.sum((y - (slope * x + intercept)) ** 2))
    r2 = 0.0 if ss_tot == 0 else 1.0 - ss_res / ss_tot
    return slope, intercept, r2


def linear_fit(x, y) -> FitResult:
    x, y = _pair(np.ravel(x), np.ravel(y))
    slope, intercept, r2 = _least_squares_line(x, y)
    return FitResult("linear", (slope, intercept), r2)


def exponential_fit(x, y) -> FitResult:
    """Fit ``y = a * exp(b * x)`` by least squares on ``log y``; R^2 is in log space."""
    x, y = _pair(np.ravel(x), np.ravel(y))
    if np.any(y <= 0):
        raise ValueError("exponential fit requires strictly positive y")
    rate, log_scale, r2 = _least_squares_line(x, np.log(y))
    return FitResult("exponential", (math.exp(log_scale), rate), r2)


def foreground_mask(reference, threshold: float = 0.05) -> np.ndarray:
    reference = np.abs(np.asarray(reference))
    return reference > threshold * float(np.max(reference, initial=0.0))
