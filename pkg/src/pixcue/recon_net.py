"""Unrolled data-consistency network with a per-pixel classification head.

Each of the first ``K - 1`` stages updates the k-space estimate as::

    y <- y - alpha_k * M(y - y_u) + F G_k(F^H y)

where ``G_k`` is a small two-layer CNN acting on the (real, imag) image.
The last stage applies only the data-consistency term, goes back to the
image domain and maps the (real, imag) image through a 3x3 convolution to
``D`` logits per pixel, followed by a softmax over classes.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .forward_model import SamplingMask
from .quantizer import QuantizedImage


@dataclass(frozen=True)
class Architecture:
    iterations: int = 4
    hidden: int = 16
    n_bits: int = 8
    # Fixed multiplier on head logits; None means D - 1. Lets modest head
    # weights express class distributions only a few classes wide.
    logit_scale: float | None = None

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("the network needs at least one iteration")
        if self.hidden < 1:
            raise ValueError("hidden channel count must be positive")
        if not 1 <= self.n_bits <= 16:
            raise ValueError("n_bits must lie in [1, 16]")

    @property
    def n_classes(self) -> int:
        return 1 << self.n_bits

    @property
    def head_scale(self) -> float:
        return float(self.n_classes - 1) if self.logit_scale is None else float(self.logit_scale)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class Dropout:
    """Stochastic forward mode: inverted dropout with a private seed."""

    fraction: float
    seed: int

    def __post_init__(self):
        if not 0.0 <= self.fraction < 1.0:
            raise ValueError(f"dropout fraction must lie in [0, 1), got {self.fraction}")


def fft2c(x: torch.Tensor) -> torch.Tensor:
    return torch.fft.fftshift(torch.fft.fft2(x, norm="ortho"), dim=(-2, -1))


def ifft2c(k: torch.Tensor) -> torch.Tensor:
    return torch.fft.ifft2(torch.fft.ifftshift(k, dim=(-2, -1)), norm="ortho")


def data_consistency(y: torch.Tensor, y_u: torch.Tensor, rows: torch.Tensor, alpha) -> torch.Tensor:
    """``y - alpha * M(y - y_u)`` with ``rows`` a (…, N, 1) 0/1 row selector."""
    return y - alpha * rows * (y - y_u)


def data_consistency_step(y: np.ndarray, y_u: np.ndarray, mask: SamplingMask, alpha: float) -> np.ndarray:
    """Numpy form of the data-consistency update on a single k-space grid."""
    y, y_u = np.asarray(y), np.asarray(y_u)
    if y.shape != y_u.shape or y.shape[0] != mask.n_lines:
        raise ValueError("k-space grids and mask must agree in size")
    rows = mask.row_mask()
    out = np.array(y, dtype=np.result_type(y, y_u, float), copy=True)
    if alpha == 1:
        # full replacement; y - (y - y_u) can differ from y_u in the last bit
        out[rows] = y_u[rows]
    else:
        out[rows] = y[rows] - alpha * (y[rows] - y_u[rows])
    return out


class ImageBlock(nn.Module):
    """Two 3x3 convolutions on (real, imag) channels with softplus between."""

    def __init__(self, hidden: int):
        super().__init__()
        self.conv1 = nn.Conv2d(2, hidden, 3, padding=1)
        self.conv2 = nn.Conv2d(hidden, 2, 3, padding=1)

    def forward(self, x: torch.Tensor, dropout: Dropout | None = None, generator=None) -> torch.Tensor:
        h = F.softplus(self.conv1(x))
        if dropout is not None and dropout.fraction > 0:
            keep = 1.0 - dropout.fraction
            draws = torch.rand(h.shape, generator=generator, dtype=h.dtype)
            h = h * (draws < keep).to(h.dtype) / keep
        return self.conv2(h)


class PixCueNet(nn.Module):
    def __init__(self, arch: Architecture = Architecture()):
        super().__init__()
        self.arch = arch
        self.alpha = nn.Parameter(torch.ones(arch.iterations))
        self.blocks = nn.ModuleList(ImageBlock(arch.hidden) for _ in range(arch.iterations - 1))
        self.head = nn.Conv2d(2, arch.n_classes, 3, padding=1)

    def logits(
        self,
        y_u: torch.Tensor,
        rows: torch.Tensor,
        dropout: Dropout | None = None,
    ) -> torch.Tensor:
        """Class logits of shape (B, D, N, N) for complex k-space ``y_u`` (B, N, N)."""
        generator = None
        if dropout is not None:
            generator = torch.Generator().manual_seed(int(dropout.seed))
        rows = rows.to(y_u.real.dtype)[..., None]
        y = y_u
        for k, block in enumerate(self.blocks):
            x = ifft2c(y)
            g = block(torch.stack([x.real, x.imag], dim=1), dropout, generator)
            y = data_consistency(y, y_u, rows, self.alpha[k]) + fft2c(torch.complex(g[:, 0], g[:, 1]))
            _check_finite(y, k)
        y = data_consistency(y, y_u, rows, self.alpha[-1])
        x = ifft2c(y)
        # (real, imag) rather than (magnitude, phase): phase is noise-dominated
        # in the background and discontinuous at +-pi
        out = self.head(torch.stack([x.real, x.imag], dim=1)) * self.arch.head_scale
        _check_finite(out, self.arch.iterations - 1)
        return out

    def forward(self, y_u, rows, dropout: Dropout | None = None) -> torch.Tensor:
        """Per-pixel log-probabilities, shape (B, D, N, N)."""
        return F.log_softmax(self.logits(y_u, rows, dropout), dim=1)


def _check_finite(t: torch.Tensor, iteration: int) -> None:
    if not torch.all(torch.isfinite(torch.view_as_real(t) if t.is_complex() else t)):
        raise FloatingPointError(f"non-finite values produced at iteration {iteration}")


def init_params(arch: Architecture = Architecture(), seed: int = 0, dtype=torch.float32) -> PixCueNet:
    """Build a network with fan-in scaled uniform weights and unit step sizes.

    Head parameters are additionally divided by the logit scale, so the
    initial logits match an unscaled head.
    """
    net = PixCueNet(arch)
    gen = torch.Generator().manual_seed(int(seed))
    with torch.no_grad():
        for name, p in net.named_parameters():
            if name == "alpha":
                p.fill_(1.0)
                continue
            conv = net.get_submodule(name.rsplit(".", 1)[0])
            fan_in = conv.in_channels * conv.kernel_size[0] * conv.kernel_size[1]
            bound = 1.0 / math.sqrt(fan_in)
            if name.startswith("head."):
                bound /= arch.head_scale
            p.copy_(torch.rand(p.shape, generator=gen, dtype=torch.float64).mul(2 * bound).sub(bound))
    return net.to(dtype)


def zero_params(arch: Architecture = Architecture(), dtype=torch.float32) -> PixCueNet:
    net = init_params(arch, 0, dtype)
    with torch.no_grad():
        for name, p in net.named_parameters():
            if name != "alpha":
                p.zero_()
    return net


# ---------------------------------------------------------------------------
# numpy-facing helpers
# ---------------------------------------------------------------------------


def _param_dtype(net: nn.Module) -> torch.dtype:
    return next(net.parameters()).dtype


def to_batch(kspaces: Sequence[np.ndarray], masks: Sequence[SamplingMask], dtype=torch.float32):
    cdtype = torch.complex128 if dtype == torch.float64 else torch.complex64
    y = torch.as_tensor(np.stack([np.asarray(k) for k in kspaces]), dtype=cdtype)
    rows = torch.as_tensor(np.stack([m.row_mask() for m in masks]).astype(np.float64), dtype=dtype)
    if y.shape[1] != rows.shape[1]:
        raise ValueError("mask size does not match k-space size")
    return y, rows


def forward(
    y_u: np.ndarray,
    mask: SamplingMask,
    net: PixCueNet,
    dropout: Dropout | None = None,
) -> np.ndarray:
    """Probability volume (N, N, D) for one undersampled k-space grid."""
    return forward_batch([y_u], [mask], net, dropout)[0]


def forward_batch(kspaces, masks, net: PixCueNet, dropout: Dropout | None = None) -> np.ndarray:
    y, rows = to_batch(kspaces, masks, _param_dtype(net))
    with torch.no_grad():
        logp = net(y, rows, dropout)
    p = torch.softmax(logp.double(), dim=1)
    return p.permute(0, 2, 3, 1).numpy()


@dataclass
class Sample:
    kspace: np.ndarray
    mask: SamplingMask
    labels: np.ndarray

    @classmethod
    def from_target(cls, kspace, mask, target: QuantizedImage) -> "Sample":
        return cls(kspace, mask, target.labels)


def batch_loss(net: PixCueNet, batch: Sequence[Sample], dropout: Dropout | None = None) -> torch.Tensor:
    """Mean cross-entropy (nats) over every pixel of every sample in ``batch``."""
    y, rows = to_batch([s.kspace for s in batch], [s.mask for s in batch], _param_dtype(net))
    labels = torch.as_tensor(np.stack([s.labels for s in batch]), dtype=torch.long)
    if int(labels.max()) >= net.arch.n_classes or int(labels.min()) < 0:
        raise ValueError("target labels out of range for the network's class count")
    logp = net(y, rows, dropout)
    return F.nll_loss(logp, labels)


def loss_and_gradients(
    net: PixCueNet, batch: Sequence[Sample], dropout: Dropout | None = None
) -> tuple[float, dict[str, np.ndarray]]:
    """Mean loss and the gradient of every named parameter."""
    net.zero_grad(set_to_none=True)
    loss = batch_loss(net, batch, dropout)
    loss.backward()
    grads = {}
    for name, p in net.named_parameters():
        g = p.grad.detach().clone().numpy() if p.grad is not None else np.zeros(tuple(p.shape))
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {name}")
        grads[name] = g
    net.zero_grad(set_to_none=True)
    return float(loss.detach()), grads
