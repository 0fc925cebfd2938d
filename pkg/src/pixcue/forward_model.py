"""Synthetic single-coil MRI acquisition.

Images and k-space grids are plain ``numpy`` arrays of shape ``(N, N)``.
K-space is stored centred: the DC bin sits at index ``N // 2`` along both
axes, so the phase-encode (row) index ``N // 2`` is the centre line.
Undersampling removes whole rows.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Iterable

import numpy as np

#: Identifier of the pseudo-random generator behind every seeded operation.
#: Bump it whenever the way draws are consumed changes.
RNG_ALGORITHM = "pcg64-seedsequence-v1"

BLEND_MODES = ("add", "replace")


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """PCG64 generator for ``seed``, split by ``stream`` via SeedSequence."""
    if seed < 0 or stream < 0:
        raise ValueError("seed and stream must be non-negative integers")
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=(int(stream),))))


def _check_square(a: np.ndarray, what: str) -> np.ndarray:
    a = np.asarray(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"{what} must be a square 2D array, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{what} contains non-finite values")
    return a


# ---------------------------------------------------------------------------
# Fourier operators
# ---------------------------------------------------------------------------


def dft2_unitary(img: np.ndarray) -> np.ndarray:
    """Orthonormal 2D DFT with the zero frequency moved to ``(N//2, N//2)``."""
    img = _check_square(img, "image")
    return np.fft.fftshift(np.fft.fft2(img, norm="ortho"))


def idft2_unitary(kspace: np.ndarray) -> np.ndarray:
    """Inverse (and adjoint) of :func:`dft2_unitary`."""
    kspace = _check_square(kspace, "k-space")
    return np.fft.ifft2(np.fft.ifftshift(kspace), norm="ortho")


# ---------------------------------------------------------------------------
# Sampling masks
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SamplingMask:
    """Sampled phase-encode lines (rows) of an ``n_lines x n_lines`` grid."""

    n_lines: int
    sampled: tuple[int, ...]

    def __post_init__(self):
        idx = tuple(sorted(int(i) for i in self.sampled))
        if len(set(idx)) != len(idx):
            raise ValueError("sampled line indices must be unique")
        if idx and (idx[0] < 0 or idx[-1] >= self.n_lines):
            raise ValueError(f"sampled line indices must lie in [0, {self.n_lines})")
        object.__setattr__(self, "sampled", idx)

    def __len__(self) -> int:
        return len(self.sampled)

    def row_mask(self) -> np.ndarray:
        """Boolean vector of length ``n_lines``, True on sampled rows."""
        m = np.zeros(self.n_lines, dtype=bool)
        m[list(self.sampled)] = True
        return m

    @property
    def acceleration(self) -> float:
        return self.n_lines / max(len(self.sampled), 1)


def center_lines(n: int, center_fraction: float) -> np.ndarray:
    """The ``round(n * f)`` lines around ``n/2``; even counts lean low."""
    count = min(int(math.floor(n * center_fraction + 0.5)), n)
    start = n // 2 - count // 2
    return np.arange(start, start + count)


def _mask_budget(n: int, accel: float, center_fraction: float) -> tuple[np.ndarray, np.ndarray, int]:
    if n < 1:
        raise ValueError("grid size must be positive")
    if not accel >= 1:
        raise ValueError(f"acceleration must be >= 1, got {accel}")
    if not 0.0 <= center_fraction <= 1.0:
        raise ValueError(f"center fraction must lie in [0, 1], got {center_fraction}")
    center = center_lines(n, center_fraction)
    others = np.setdiff1d(np.arange(n), center)
    extra = max(0, int(math.floor(n / accel)) - len(center))
    return center, others, extra


def make_mask_equidistant(n: int, accel: float, center_fraction: float) -> SamplingMask:
    """Centre block plus equally strided lines drawn from the remaining rows."""
    center, others, extra = _mask_budget(n, accel, center_fraction)
    if extra:
        pos = np.floor((np.arange(extra) + 0.5) * len(others) / extra).astype(int)
        chosen = others[pos]
    else:
        chosen = np.array([], dtype=int)
    return SamplingMask(n, tuple(np.concatenate([center, chosen]).tolist()))


def make_mask_random(n: int, accel: float, center_fraction: float, seed: int) -> SamplingMask:
    """Centre block plus uniformly drawn (without replacement) extra lines."""
    center, others, extra = _mask_budget(n, accel, center_fraction)
    rng = make_rng(seed, stream=1)
    chosen = rng.choice(others, size=extra, replace=False) if extra else np.array([], dtype=int)
    return SamplingMask(n, tuple(np.concatenate([center, chosen]).tolist()))


def make_mask(kind: str, n: int, accel: float, center_fraction: float, seed: int = 0) -> SamplingMask:
    if kind == "equidistant":
        return make_mask_equidistant(n, accel, center_fraction)
    if kind == "random":
        return make_mask_random(n, accel, center_fraction, seed)
    raise ValueError(f"unknown mask kind {kind!r}")


def undersample(kspace: np.ndarray, mask: SamplingMask) -> np.ndarray:
    """Zero every row of ``kspace`` that ``mask`` does not sample."""
    kspace = _check_square(kspace, "k-space")
    if mask.n_lines != kspace.shape[0]:
        raise ValueError(f"mask covers {mask.n_lines} lines but k-space has {kspace.shape[0]} rows")
    return np.where(mask.row_mask()[:, None], kspace, 0)


# ---------------------------------------------------------------------------
# Noise and naive reconstruction
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NoiseSpec:
    sigma: float
    seed: int = 0

    def __post_init__(self):
        if not self.sigma >= 0:
            raise ValueError(f"noise sigma must be >= 0, got {self.sigma}")


def add_complex_noise(kspace: np.ndarray, spec: NoiseSpec) -> np.ndarray:
    """Add i.i.d. N(0, sigma^2) noise to the real and imaginary part of every bin."""
    kspace = _check_square(kspace, "k-space").astype(np.complex128)
    if spec.sigma == 0:
        return kspace.copy()
    rng = make_rng(spec.seed, stream=2)
    noise = rng.normal(0.0, spec.sigma, size=kspace.shape + (2,))
    return kspace + (noise[..., 0] + 1j * noise[..., 1])


def zero_filled(y_u: np.ndarray) -> np.ndarray:
    return idft2_unitary(y_u)


def image_snr_db(clean: np.ndarray, noisy: np.ndarray) -> float:
    """Image-domain SNR (dB) of ``noisy`` against ``clean``."""
    err = np.sum(np.abs(noisy - clean) ** 2)
    sig = np.sum(np.abs(clean) ** 2)
    if err == 0:
        return math.inf
    return 10.0 * math.log10(sig / err)


# ---------------------------------------------------------------------------
# Phantoms
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Ellipse:
    """Ellipse in image-fraction coordinates.

    ``center`` is ``(x, y)`` with x along columns and y along rows, both as a
    fraction of the image side; ``axes`` are the semi-axes as fractions too.
    """

    center: tuple[float, float]
    axes: tuple[float, float]
    angle: float = 0.0
    intensity: float = 1.0
    blend: str = "replace"

    def __post_init__(self):
        if self.blend not in BLEND_MODES:
            raise ValueError(f"blend must be one of {BLEND_MODES}, got {self.blend!r}")
        if not (self.axes[0] > 0 and self.axes[1] > 0):
            raise ValueError("ellipse semi-axes must be positive")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        object.__setattr__(self, "axes", tuple(float(a) for a in self.axes))

    def inside(self, n: int) -> np.ndarray:
        """Boolean (n, n) map of pixels whose centres fall inside the ellipse."""
        coords = (np.arange(n) + 0.5) / n
        yy, xx = np.meshgrid(coords, coords, indexing="ij")
        dx, dy = xx - self.center[0], yy - self.center[1]
        c, s = math.cos(self.angle), math.sin(self.angle)
        u = (dx * c + dy * s) / self.axes[0]
        v = (-dx * s + dy * c) / self.axes[1]
        return u * u + v * v <= 1.0

    @classmethod
    def from_dict(cls, d: dict) -> "Ellipse":
        return cls(
            center=tuple(d["center"]),
            axes=tuple(d["axes"]),
            angle=float(d.get("angle", 0.0)),
            intensity=float(d.get("intensity", 1.0)),
            blend=d.get("blend", "replace"),
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["center"], d["axes"] = list(self.center), list(self.axes)
        return d


def _gamma(g: float):
    return lambda x: np.power(np.clip(x, 0.0, 1.0), g)


# Monotone remaps standing in for sequence-dependent contrast. All fix 0 -> 0.
CONTRAST_PROFILES = {
    "identity": lambda x: x,
    "t1": _gamma(0.9),
    "t2": _gamma(0.75),
    "flair": _gamma(1.3),
    "pd": lambda x: np.clip(0.8 * x + 0.2 * np.sqrt(np.clip(x, 0.0, 1.0)), 0.0, 1.0) * 0.95,
}


@dataclass(frozen=True)
class PhantomSpec:
    size: int
    ellipses: tuple[Ellipse, ...] = ()
    contrast_profile: str = "identity"
    anomaly: Ellipse | None = None
    # amplitude of a seeded, smooth multiplicative intensity field (0 = off)
    texture: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.texture < 1.0:
            raise ValueError("texture amplitude must lie in [0, 1)")
        if self.size < 16 or self.size % 2:
            raise ValueError(f"phantom size must be even and >= 16, got {self.size}")
        if self.contrast_profile not in CONTRAST_PROFILES:
            raise ValueError(f"unknown contrast profile {self.contrast_profile!r}")
        object.__setattr__(self, "ellipses", tuple(self.ellipses))

    @classmethod
    def from_dict(cls, d: dict) -> "PhantomSpec":
        anomaly = d.get("anomaly")
        return cls(
            size=int(d["size"]),
            ellipses=tuple(Ellipse.from_dict(e) for e in d.get("ellipses", [])),
            contrast_profile=d.get("contrast_profile", "identity"),
            anomaly=Ellipse.from_dict(anomaly) if anomaly else None,
            texture=float(d.get("texture", 0.0)),
        )

    def to_dict(self) -> dict:
        return {
            "size": self.size,
            "ellipses": [e.to_dict() for e in self.ellipses],
            "contrast_profile": self.contrast_profile,
            "anomaly": self.anomaly.to_dict() if self.anomaly else None,
            "texture": self.texture,
        }


def rasterize(ellipses: Iterable[Ellipse], n: int, base: np.ndarray | None = None) -> np.ndarray:
    img = np.zeros((n, n)) if base is None else np.array(base, dtype=float)
    for e in ellipses:
        inside = e.inside(n)
        if e.blend == "add":
            img[inside] += e.intensity
        else:
            img[inside] = e.intensity
    return img


def smooth_field(n: int, seed: int, order: int = 3) -> np.ndarray:
    """Seeded low-frequency field scaled to [-1, 1]."""
    rng = make_rng(seed, stream=5)
    coords = (np.arange(n) + 0.5) / n
    yy, xx = np.meshgrid(coords, coords, indexing="ij")
    field = np.zeros((n, n))
    for p in range(order + 1):
        for q in range(order + 1 - p):
            phase = rng.uniform(0, 2 * math.pi)
            field += rng.normal() / (1 + p + q) * np.cos(math.pi * (p * xx + q * yy) + phase)
    return field / max(np.max(np.abs(field)), 1e-12)


def generate_phantom(spec: PhantomSpec, seed: int = 0) -> np.ndarray:
    """Rasterize ``spec`` into a real-valued complex image in [0, 1].

    Ellipses are drawn in order, modulated by the smooth texture field when
    ``spec.texture > 0`` (the only use of ``seed``), remapped by the contrast
    profile and clamped. The anomaly, if any, is pasted last so its
    intensity is not remapped.
    """
    img = rasterize(spec.ellipses, spec.size)
    if spec.texture > 0:
        img = img * (1.0 + spec.texture * smooth_field(spec.size, seed))
    img = np.clip(CONTRAST_PROFILES[spec.contrast_profile](np.clip(img, 0.0, 1.0)), 0.0, 1.0)
    if spec.anomaly is not None:
        img = np.real(insert_anomaly(img, spec.anomaly))
    return img.astype(np.complex128)


def insert_anomaly(img: np.ndarray, anomaly: Ellipse) -> np.ndarray:
    """Overwrite the pixels inside ``anomaly`` with its intensity."""
    img = _check_square(img, "image")
    out = np.array(img, dtype=np.result_type(img.dtype, float), copy=True)
    out[anomaly.inside(out.shape[0])] = anomaly.intensity
    return out


def random_phantom_spec(
    size: int, seed: int, contrast_profile: str = "t1", texture: float = 0.15
) -> PhantomSpec:
    """Brain-like ellipse composition with seeded jitter.

    Tissue intensities stay below ~0.75 before the contrast remap, which
    leaves the upper end of the range free for out-of-distribution anomalies.
    """
    rng = make_rng(seed, stream=3)
    u = rng.uniform

    cx, cy = 0.5 + u(-0.02, 0.02), 0.5 + u(-0.02, 0.02)
    ax, ay = u(0.34, 0.40), u(0.40, 0.46)
    rot = u(-0.15, 0.15)
    ellipses = [
        Ellipse((cx, cy), (ax, ay), rot, u(0.55, 0.7), "replace"),  # skull
        Ellipse((cx, cy + 0.01), (ax - 0.035, ay - 0.035), rot, u(0.22, 0.32), "replace"),  # brain
    ]
    # ventricles
    for side in (-1, 1):
        ellipses.append(
            Ellipse(
                (cx + side * u(0.05, 0.09), cy + u(-0.04, 0.02)),
                (u(0.03, 0.06), u(0.08, 0.14)),
                side * u(0.2, 0.45),
                u(0.06, 0.14),
                "replace",
            )
        )
    # grey-matter-like blobs
    for _ in range(int(rng.integers(3, 7))):
        r = u(0.0, 0.22)
        t = u(0.0, 2 * math.pi)
        ellipses.append(
            Ellipse(
                (cx + r * math.cos(t), cy + r * math.sin(t) * 1.1),
                (u(0.02, 0.07), u(0.02, 0.07)),
                u(0.0, math.pi),
                u(0.35, 0.6),
                "replace",
            )
        )
    return PhantomSpec(size=size, ellipses=tuple(ellipses), contrast_profile=contrast_profile, texture=texture)


def random_anomaly(spec: PhantomSpec, seed: int, intensity: float = 0.95, area_fraction: float = 0.012) -> Ellipse:
    """A replace-blend ellipse placed inside the brain ellipse of ``spec``."""
    rng = make_rng(seed, stream=4)
    brain = spec.ellipses[1]
    aspect = rng.uniform(0.6, 1.0)
    a = math.sqrt(area_fraction / (math.pi * aspect))
    r = rng.uniform(0.0, 0.5)
    t = rng.uniform(0.0, 2 * math.pi)
    center = (
        brain.center[0] + r * (brain.axes[0] - a) * math.cos(t),
        brain.center[1] + r * (brain.axes[1] - a) * math.sin(t),
    )
    return Ellipse(center, (a, a * aspect), rng.uniform(0.0, math.pi), intensity, "replace")


def simulate_acquisition(
    image: np.ndarray, mask: SamplingMask, noise: NoiseSpec | None = None
) -> np.ndarray:
    """Fully sampled k-space of ``image``, optional noise, then undersampling."""
    k = dft2_unitary(image)
    if noise is not None:
        k = add_complex_noise(k, noise)
    return undersample(k, mask)

