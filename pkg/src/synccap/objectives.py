"""Language cross-entropy and the two attention-structuring losses.

All losses take batched inputs and return the batch mean of per-sample
values, so a padded batch gives the same number as averaging the
unpadded samples one by one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tt
from .tensor import Tensor

LAMBDA_0 = 0.1
LAMBDA_M = 1000.0
MARGIN = 1.0


def _batched(x: Tensor, ndim: int) -> Tensor:
    return x.reshape(1, *x.shape) if x.ndim == ndim - 1 else x


def loss_lang(logits, targets, mask=None) -> Tensor:
    """Mean negative log-likelihood of ``targets`` over non-pad positions.

    ``logits`` is ``(T_y, V)`` or ``(B, T_y, V)``; ``targets`` matches its
    leading shape. Each sample is normalised by its own count of real
    tokens before averaging over the batch.
    """
    logits = _batched(tt.as_tensor(logits), 3)
    targets = np.asarray(targets, dtype=np.int64).reshape(logits.shape[:2])
    B, T, V = logits.shape
    if targets.size and (targets.min() < 0 or targets.max() >= V):
        raise ValueError(f"target id out of range [0, {V})")
    mask = np.ones((B, T), dtype=bool) if mask is None else np.asarray(mask, dtype=bool).reshape(B, T)
    counts = mask.sum(axis=1)
    if np.any(counts == 0):
        raise ValueError("a sample has no target tokens")
    logp = tt.log_softmax(logits)
    picked = logp[np.arange(B)[:, None], np.arange(T)[None, :], targets]
    weights = mask / (counts[:, None] * B)
    return -(picked * weights).sum()


def loss_init(m0, T_x) -> Tensor:
    """``m_0 / T_x`` averaged over the batch."""
    m0 = tt.as_tensor(m0).reshape(-1)
    T_x = np.asarray(T_x, dtype=np.float64).reshape(-1)
    return (m0 * (1.0 / T_x)).mean()


def loss_monotonic(centers, margin: float = MARGIN, T_x=None, mask=None) -> Tensor:
    """Squared hinge on ``m_t + margin - m_{t+1}``, summed over consecutive
    valid steps and divided by the motion length ``T_x``."""
    centers = _batched(tt.as_tensor(centers), 2)
    B, T = centers.shape
    norm = np.ones(B) if T_x is None else np.asarray(T_x, dtype=np.float64).reshape(B)
    if T < 2:
        return Tensor(0.0) if not centers.requires_grad else (centers * 0.0).sum()
    valid = np.ones((B, T), dtype=bool) if mask is None else np.asarray(mask, dtype=bool).reshape(B, T)
    pair = valid[:, 1:] & valid[:, :-1]
    gap = centers[:, :-1] + margin - centers[:, 1:]
    violation = tt.relu(gap)
    weights = pair / (norm[:, None] * B)
    return (tt.square(violation) * weights).sum()


@dataclass
class LossBreakdown:
    total: Tensor
    loss_lang: float
    loss_0: float
    loss_m: float
    lambda_0: float
    lambda_m: float
    margin: float

    def as_dict(self) -> dict[str, float]:
        return {"total": float(self.total), "loss_lang": self.loss_lang, "loss_0": self.loss_0,
                "loss_m": self.loss_m}


def total_loss(lang, init, mono, lambda_0: float = LAMBDA_0, lambda_m: float = LAMBDA_M,
               margin: float = MARGIN) -> LossBreakdown:
    """``lang + lambda_0 * init + lambda_m * mono`` with the parts kept for logging."""
    lang, init, mono = tt.as_tensor(lang), tt.as_tensor(init), tt.as_tensor(mono)
    total = lang
    if lambda_0:
        total = total + init * lambda_0
    if lambda_m:
        total = total + mono * lambda_m
    return LossBreakdown(total, float(lang), float(init), float(mono), lambda_0, lambda_m, margin)


def batch_losses(logits, cross, targets, target_mask, lengths, lambda_0: float = LAMBDA_0,
                 lambda_m: float = LAMBDA_M, margin: float = MARGIN) -> LossBreakdown:
    """Full objective for a teacher-forced batch.

    ``cross.centers[:, 0]`` (the BOS step) anchors the start; every
    non-pad step joins the monotonic chain.
    """
    lang = loss_lang(logits, targets, target_mask)
    init = loss_init(cross.centers[:, 0], lengths)
    mono = loss_monotonic(cross.centers, margin, lengths, target_mask)
    return total_loss(lang, init, mono, lambda_0, lambda_m, margin)
