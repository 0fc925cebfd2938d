"""Per-pixel uncertainty maps from class distributions and MC dropout."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .forward_model import SamplingMask, make_rng
from .quantizer import check_probabilities, class_values, expectation_image
from .recon_net import Dropout, PixCueNet, forward

PEAK_FRACTION = 0.6


@dataclass(frozen=True)
class McConfig:
    passes: int = 50
    dropout_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.passes < 2:
            raise ValueError(f"MC dropout needs at least 2 passes, got {self.passes}")
        if not 0.0 <= self.dropout_fraction < 1.0:
            raise ValueError("dropout fraction must lie in [0, 1)")

    def pass_seeds(self) -> list[int]:
        rng = make_rng(self.seed, stream=20)
        return [int(s) for s in rng.integers(0, 2**63, size=self.passes)]


def exact_variance_map(p: np.ndarray) -> np.ndarray:
    """Variance of the class index under each pixel's distribution, over D - 1."""
    p = check_probabilities(p)
    d = p.shape[-1]
    c = class_values(d)
    mean = p @ c
    # centred second moment; the raw-moment form cancels badly for sharp peaks
    var = np.einsum("ijk,ijk->ij", p, (c[None, None, :] - mean[..., None]) ** 2)
    return np.maximum(var, 0.0) / (d - 1)


def peak_counts(p: np.ndarray, fraction: float = PEAK_FRACTION) -> np.ndarray:
    """Number of classes above ``fraction`` x the 3-point-smoothed peak."""
    p = check_probabilities(p)
    d = p.shape[-1]
    top = np.argmax(p, axis=-1)[..., None]
    total = np.zeros(top.shape)
    count = np.zeros(top.shape)
    for off in (-1, 0, 1):
        idx = top + off
        ok = (idx >= 0) & (idx < d)
        total += np.where(ok, np.take_along_axis(p, np.clip(idx, 0, d - 1), axis=-1), 0.0)
        count += ok
    peak = total / count
    return np.sum(p > fraction * peak, axis=-1)


def fast_variance_map(p: np.ndarray) -> np.ndarray:
    """Width-by-counting variance estimate, in the units of :func:`exact_variance_map`.

    A Gaussian exceeds 0.6 of its maximum within about one standard deviation
    of the mean, so the count of such classes is ~ 2*sigma + 1.
    """
    p = check_probabilities(p)
    d = p.shape[-1]
    half_width = (peak_counts(p) - 1) / 2.0
    return half_width**2 / (d - 1)


def _dropout_passes(y_u, mask: SamplingMask, net: PixCueNet, cfg: McConfig):
    for seed in cfg.pass_seeds():
        yield forward(y_u, mask, net, Dropout(cfg.dropout_fraction, seed))


def variance_over_passes(images: np.ndarray) -> np.ndarray:
    """Population variance (1/T) along the first axis."""
    images = np.asarray(images, dtype=float)
    if images.shape[0] < 2:
        raise ValueError("need at least two passes")
    # shift by the first pass so identical passes give exactly zero
    dev = images - images[0]
    return np.maximum(np.mean(dev**2, axis=0) - np.mean(dev, axis=0) ** 2, 0.0)


def mc_dropout_variance(y_u, mask: SamplingMask, net: PixCueNet, cfg: McConfig) -> np.ndarray:
    """Predictive variance of the expectation image across T dropout passes."""
    recons = np.stack([expectation_image(p) for p in _dropout_passes(y_u, mask, net, cfg)])
    return variance_over_passes(recons)


def mean_distribution(volumes) -> np.ndarray:
    total = None
    n = 0
    for v in volumes:
        total = np.array(v, dtype=float) if total is None else total + v
        n += 1
    if n < 2:
        raise ValueError("need at least two passes")
    return total / n


def mc_mean_distribution_variance(y_u, mask: SamplingMask, net: PixCueNet, cfg: McConfig) -> np.ndarray:
    """Exact variance map of the pixel-wise average of T dropout distributions."""
    return exact_variance_map(mean_distribution(_dropout_passes(y_u, mask, net, cfg)))


def error_map(recon: np.ndarray, reference: np.ndarray) -> np.ndarray:
    recon, reference = np.asarray(recon), np.asarray(reference)
    if recon.shape != reference.shape:
        raise ValueError(f"shape mismatch: {recon.shape} vs {reference.shape}")
    return np.abs(recon - reference)
