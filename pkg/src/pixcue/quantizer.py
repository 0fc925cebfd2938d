"""Intensity quantization, class targets and classification losses.

A probability volume is an ``(rows, cols, D)`` array whose last axis holds a
distribution over the ``D = 2**n_bits`` intensity classes of each pixel.
Class ``c`` stands for the intensity ``c / (D - 1)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PROB_CLAMP = 1e-12
DEFAULT_BITS = 8


@dataclass(frozen=True)
class QuantizedImage:
    labels: np.ndarray
    n_bits: int

    @property
    def n_classes(self) -> int:
        return 1 << self.n_bits

    @property
    def shape(self) -> tuple[int, int]:
        return self.labels.shape


def _check_bits(n_bits: int) -> int:
    if not 1 <= int(n_bits) <= 16:
        raise ValueError(f"n_bits must lie in [1, 16], got {n_bits}")
    return int(n_bits)


def quantize(img: np.ndarray, n_bits: int = DEFAULT_BITS) -> QuantizedImage:
    """Round-half-up each clamped pixel of ``img`` to one of ``2**n_bits`` levels."""
    n_bits = _check_bits(n_bits)
    d = 1 << n_bits
    x = np.clip(np.real(np.asarray(img)).astype(float), 0.0, 1.0)
    labels = np.floor(x * (d - 1) + 0.5).astype(np.int64)
    return QuantizedImage(np.minimum(labels, d - 1), n_bits)


def dequantize(q: QuantizedImage) -> np.ndarray:
    return q.labels / (q.n_classes - 1)


def one_hot_target(q: QuantizedImage) -> np.ndarray:
    d = q.n_classes
    out = np.zeros(q.labels.shape + (d,))
    np.put_along_axis(out, q.labels[..., None], 1.0, axis=-1)
    return out


def check_probabilities(p: np.ndarray, tol: float = 1e-3) -> np.ndarray:
    """Validate a probability volume and return it as a float array."""
    p = np.asarray(p, dtype=float)
    if p.ndim != 3:
        raise ValueError(f"probability volume must be (rows, cols, D), got shape {p.shape}")
    if not np.all(np.isfinite(p)) or np.any(p < 0):
        raise ValueError("probabilities must be finite and non-negative")
    dev = np.max(np.abs(p.sum(axis=-1) - 1.0)) if p.size else 0.0
    if dev > tol:
        raise ValueError(f"per-pixel probabilities must sum to 1 (max deviation {dev:.3g})")
    return p


def class_values(d: int) -> np.ndarray:
    return np.arange(d, dtype=float)


def expectation_image(p: np.ndarray) -> np.ndarray:
    """Probability-weighted mean class, rescaled to [0, 1]."""
    p = check_probabilities(p)
    d = p.shape[-1]
    return p @ class_values(d) / (d - 1)


def cross_entropy(p: np.ndarray, target: np.ndarray) -> tuple[np.ndarray, float]:
    """Per-pixel categorical cross-entropy in nats and its mean over pixels."""
    p, target = np.asarray(p, dtype=float), np.asarray(target, dtype=float)
    if p.shape != target.shape:
        raise ValueError(f"shape mismatch: prediction {p.shape} vs target {target.shape}")
    loss = -np.sum(target * np.log(np.maximum(p, PROB_CLAMP)), axis=-1)
    return loss, float(loss.mean())


def kl_divergence(target: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Per-pixel KL(target || p), with ``0 * log(0 / q)`` taken as 0.

    The prediction is clamped exactly as in :func:`cross_entropy`, so for
    one-hot targets both functions agree to the last bit.
    """
    p, target = np.asarray(p, dtype=float), np.asarray(target, dtype=float)
    if p.shape != target.shape:
        raise ValueError(f"shape mismatch: target {target.shape} vs prediction {p.shape}")
    safe_t = np.where(target > 0, target, 1.0)
    log_t = np.where(target > 0, np.log(safe_t), 0.0)
    terms = np.where(target > 0, target * log_t, 0.0) - target * np.log(np.maximum(p, PROB_CLAMP))
    return np.sum(terms, axis=-1)
