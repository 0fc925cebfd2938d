"""Training loop: RAdam on the mean pixel cross-entropy, best-validation snapshot."""

from __future__ import annotations

import copy
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
import torch

from .forward_model import SamplingMask, dft2_unitary, make_rng, undersample
from .quantizer import quantize
from .recon_net import Architecture, Dropout, PixCueNet, Sample, batch_loss, init_params

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainingConfig:
    learning_rate: float = 1e-4
    epochs: int = 30
    batch_size: int = 1
    seed: int = 0
    dropout_fraction: float = 0.0
    validation_fraction: float = 0.2
    n_bits: int = 8
    iterations: int = 4
    hidden: int = 16
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError("learning rate must be non-negative")
        if not 0.0 <= self.dropout_fraction < 1.0:
            raise ValueError("dropout fraction must lie in [0, 1)")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ValueError("validation fraction must lie in [0, 1)")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch size must be positive")
        object.__setattr__(self, "betas", tuple(self.betas))

    @property
    def architecture(self) -> Architecture:
        return Architecture(self.iterations, self.hidden, self.n_bits)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainingConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown training config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d


@dataclass
class Checkpoint:
    net: PixCueNet
    config: TrainingConfig
    best_val_loss: float
    train_history: list[float] = field(default_factory=list)
    val_history: list[float] = field(default_factory=list)
    best_epoch: int = 0
    mask_spec: dict = field(default_factory=dict)


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, train_history: list[float], val_history: list[float]):
        super().__init__(message)
        self.train_history = train_history
        self.val_history = val_history


def make_sample(image: np.ndarray, mask: SamplingMask, n_bits: int, kspace: np.ndarray | None = None) -> Sample:
    """Training pair: undersampled k-space of ``image`` and its quantized magnitude."""
    if kspace is None:
        kspace = undersample(dft2_unitary(image), mask)
    return Sample(kspace, mask, quantize(np.abs(image), n_bits).labels)


def split_indices(n: int, validation_fraction: float, seed: int) -> tuple[list[int], list[int]]:
    """Seeded shuffle then split; at least one sample always stays in training.

    When the validation share rounds to zero, validation reuses the training
    indices so a best-validation snapshot is still defined.
    """
    order = make_rng(seed, stream=10).permutation(n).tolist()
    n_val = min(int(round(n * validation_fraction)), n - 1)
    val, tr = order[:n_val], order[n_val:]
    return tr, (val if val else list(tr))


def _mean_loss(net: PixCueNet, samples: Sequence[Sample], batch_size: int) -> float:
    with torch.no_grad():
        total = 0.0
        for i in range(0, len(samples), batch_size):
            chunk = samples[i : i + batch_size]
            total += float(batch_loss(net, chunk)) * len(chunk)
    return total / len(samples)


def train(
    dataset: Sequence[tuple[np.ndarray, SamplingMask]] | Sequence[Sample],
    config: TrainingConfig,
    net: PixCueNet | None = None,
    mask_spec: dict | None = None,
) -> Checkpoint:
    """Train on ``(image, mask)`` pairs (or prepared samples).

    Returns the parameters from the epoch with the lowest validation loss.
    """
    if len(dataset) == 0:
        raise ValueError("cannot train on an empty dataset")
    samples = [s if isinstance(s, Sample) else make_sample(s[0], s[1], config.n_bits) for s in dataset]
    tr_idx, val_idx = split_indices(len(samples), config.validation_fraction, config.seed)
    train_set = [samples[i] for i in tr_idx]
    val_set = [samples[i] for i in val_idx]

    if net is None:
        net = init_params(config.architecture, config.seed)
    opt = torch.optim.RAdam(net.parameters(), lr=config.learning_rate, betas=config.betas, eps=config.eps)
    order_rng = make_rng(config.seed, stream=11)
    dropout_seeds = make_rng(config.seed, stream=12)

    train_hist: list[float] = []
    val_hist: list[float] = []
    best = (math.inf, copy.deepcopy(net.state_dict()), 0)
    for epoch in range(config.epochs):
        net.train()
        order = order_rng.permutation(len(train_set))
        running = 0.0
        for i in range(0, len(order), config.batch_size):
            chunk = [train_set[j] for j in order[i : i + config.batch_size]]
            dropout = None
            if config.dropout_fraction > 0:
                dropout = Dropout(config.dropout_fraction, int(dropout_seeds.integers(2**63)))
            opt.zero_grad(set_to_none=True)
            loss = batch_loss(net, chunk, dropout)
            if not torch.isfinite(loss):
                raise TrainingDiverged(f"loss became non-finite in epoch {epoch}", train_hist, val_hist)
            loss.backward()
            opt.step()
            running += float(loss.detach()) * len(chunk)
        train_hist.append(running / len(train_set))
        net.eval()
        val_loss = _mean_loss(net, val_set, max(config.batch_size, 4))
        if not math.isfinite(val_loss):
            raise TrainingDiverged(f"validation loss became non-finite in epoch {epoch}", train_hist, val_hist)
        val_hist.append(val_loss)
        log.info("epoch %d train %.4f val %.4f", epoch, train_hist[-1], val_loss)
        if val_loss < best[0]:
            best = (val_loss, copy.deepcopy(net.state_dict()), epoch)

    net.load_state_dict(best[1])
    return Checkpoint(
        net=net,
        config=config,
        best_val_loss=best[0],
        train_history=train_hist,
        val_history=val_hist,
        best_epoch=best[2],
        mask_spec=dict(mask_spec or {}),
    )
