"""Windowed self-attention and window-controlled cross-attention.

Both blocks work on batched inputs ``(B, T, d)``; unbatched ``(T, d)``
inputs are accepted and returned unbatched.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as tt
from .tensor import Tensor

INF = math.inf


def parse_radius(value) -> float:
    """Window radius from config/CLI input; ``None``/"inf" mean unbounded."""
    if value is None:
        return INF
    if isinstance(value, str):
        if value.strip().lower() in {"inf", "infinity", "none", "∞"}:
            return INF
        value = int(value)
    if value == INF:
        return INF
    if int(value) != value or value < 0:
        raise ValueError(f"window radius must be a non-negative integer or inf, got {value!r}")
    return int(value)


def radius_to_json(value: float):
    return "inf" if value == INF else int(value)


@dataclass(frozen=True)
class SelfWindow:
    r: float = INF

    def __post_init__(self):
        r = parse_radius(self.r)
        if r != INF and r < 1:
            raise ValueError("self window radius must be >= 1 or inf")
        object.__setattr__(self, "r", r)


@dataclass(frozen=True)
class CrossWindow:
    D: float = INF

    def __post_init__(self):
        D = parse_radius(self.D)
        if D != INF and D < 1:
            raise ValueError("cross window radius must be >= 1 or inf")
        object.__setattr__(self, "D", D)


@dataclass
class AttentionMap:
    """Cross-attention of one sequence: ``beta`` is ``T_y × T_x``."""

    beta: np.ndarray
    centers: np.ndarray
    windows: np.ndarray
    tokens: list[str] | None = None

    def check(self, atol: float = 1e-6) -> None:
        T_x = self.beta.shape[1]
        if not np.allclose(self.beta.sum(axis=1), 1.0, atol=atol):
            raise ValueError("attention rows must sum to 1")
        idx = np.arange(T_x)
        outside = (idx[None, :] < self.windows[:, :1]) | (idx[None, :] > self.windows[:, 1:])
        if np.any(self.beta[outside] != 0):
            raise ValueError("attention mass outside realised window")
        if np.any(self.centers < 0) or np.any(self.centers > T_x - 1):
            raise ValueError("centers out of range")
        if not np.allclose(self.beta @ idx, self.centers, atol=atol):
            raise ValueError("centers disagree with attention rows")


def band_mask(T: int, r: float, causal: bool = False) -> np.ndarray:
    i = np.arange(T)
    diff = i[None, :] - i[:, None]
    mask = np.ones((T, T), dtype=bool) if r == INF else np.abs(diff) <= r
    if causal:
        mask &= diff <= 0
    return mask


def receptive_field(r: float, D: float) -> float:
    """Frames visible to one decoding step through both masks: ``2(D + r)``.

    The span is ``[m_t - D - r, m_t + D + r]``.
    """
    r, D = parse_radius(r), parse_radius(D)
    if r == INF or D == INF:
        return INF
    return 2 * (D + r)


def _split_heads(x: Tensor, B: int, T: int, heads: int) -> Tensor:
    return x.reshape(B, T, heads, -1).transpose(0, 2, 1, 3)


def windowed_self_attention(x: Tensor, params: dict[str, Tensor], prefix: str, heads: int,
                            window: SelfWindow | float = INF, pad_mask=None,
                            causal: bool = False) -> tuple[Tensor, Tensor]:
    """Multi-head self-attention restricted to ``|i - j| <= r``.

    Returns the merged context ``z`` (projected by ``W_O``) and the weights
    ``alpha`` of shape ``(B, heads, T, T)``. Scores are scaled by the full
    model width ``sqrt(d)``. Padded query rows attend to themselves only, so
    they stay finite; callers ignore them.
    """
    r = window.r if isinstance(window, SelfWindow) else parse_radius(window)
    unbatched = x.ndim == 2
    if unbatched:
        x = x.reshape(1, *x.shape)
    B, T, d = x.shape
    if d % heads:
        raise ValueError(f"model width {d} not divisible by {heads} heads")
    valid = np.ones((B, T), dtype=bool) if pad_mask is None else np.asarray(pad_mask, dtype=bool)
    if valid.shape != (B, T):
        raise ValueError(f"pad mask shape {valid.shape} != {(B, T)}")

    mask = band_mask(T, r, causal)[None, :, :] & valid[:, None, :]
    eye = np.eye(T, dtype=bool)[None]
    mask = np.where(~valid[:, :, None], eye, mask)
    if not mask.any(axis=-1).all():
        raise ValueError("self-attention window is empty for some frame")

    p = lambda n: params[f"{prefix}.{n}"]
    q = _split_heads(x @ p("W_Q") + p("b_Q"), B, T, heads)
    k = _split_heads(x @ p("W_K") + p("b_K"), B, T, heads)
    v = _split_heads(x @ p("W_V") + p("b_V"), B, T, heads)
    scores = (q @ tt.swap_last(k)) * (1.0 / math.sqrt(d))
    alpha = tt.masked_softmax(scores, mask[:, None, :, :])
    ctx = (alpha @ v).transpose(0, 2, 1, 3).reshape(B, T, d)
    z = ctx @ p("W_O")
    if unbatched:
        return z.reshape(T, d), alpha.reshape(heads, T, T)
    return z, alpha


@dataclass
class CrossResult:
    context: Tensor      # r_t, (B, T_y, d)
    beta: Tensor         # (B, T_y, T_x)
    centers: Tensor      # m_t, (B, T_y)
    bounds: np.ndarray   # (B, T_y, 2) inclusive integer window
    provisional: np.ndarray  # pass-1 centers, (B, T_y)


def cross_window_bounds(provisional: np.ndarray, D: float, lengths: np.ndarray) -> np.ndarray:
    """Outward-rounded window ``[floor(m) - D, ceil(m) + D]`` clipped to valid frames."""
    last = (np.asarray(lengths) - 1)[:, None]
    if D == INF:
        lo = np.zeros_like(provisional, dtype=np.int64)
        hi = np.broadcast_to(last, provisional.shape).astype(np.int64)
    else:
        lo = np.maximum(np.floor(provisional).astype(np.int64) - D, 0)
        hi = np.minimum(np.ceil(provisional).astype(np.int64) + D, last)
    return np.stack([lo, hi], axis=-1)


def cross_attention_controlled(keys: Tensor, values: Tensor, query: Tensor,
                               window: CrossWindow | float = INF, frame_mask=None) -> CrossResult:
    """Single-head cross-attention whose support follows its own centre.

    Pass 1 softmaxes the scores over all valid frames and takes the
    expected frame index. Pass 2 renormalises the same scores inside the
    window around that centre. Window bounds are constants for the backward
    pass; the returned centres are recomputed from the final weights.

    Shapes: keys/values ``(B, T_x, d)``, query ``(B, T_y, d)``.
    Lower-rank inputs (``(T_x, d)`` with query ``(d,)`` or ``(T_y, d)``) are
    promoted; outputs keep the batch axis.
    """
    D = window.D if isinstance(window, CrossWindow) else parse_radius(window)
    if keys.ndim == 2:
        keys = keys.reshape(1, *keys.shape)
        values = values.reshape(1, *values.shape)
    if query.ndim == 1:
        query = query.reshape(1, 1, query.shape[0])
    elif query.ndim == 2:
        query = query.reshape(1, *query.shape)
    B, T_x, d = keys.shape
    T_y = query.shape[1]
    valid = np.ones((B, T_x), dtype=bool) if frame_mask is None else np.asarray(frame_mask, dtype=bool)
    lengths = valid.sum(axis=1)
    if np.any(lengths == 0):
        raise ValueError("cross-attention over an empty motion")

    scores = (query @ tt.swap_last(keys)) * (1.0 / math.sqrt(d))
    idx = np.arange(T_x, dtype=np.float64)
    full_mask = np.broadcast_to(valid[:, None, :], scores.shape)

    s = np.where(full_mask, scores.data, -np.inf)
    s = s - s.max(axis=-1, keepdims=True)
    e = np.where(full_mask, np.exp(s), 0.0)
    provisional = (e / e.sum(axis=-1, keepdims=True)) @ idx

    bounds = cross_window_bounds(provisional, D, lengths)
    in_window = (idx[None, None, :] >= bounds[..., :1]) & (idx[None, None, :] <= bounds[..., 1:])
    beta = tt.masked_softmax(scores, in_window & full_mask)
    centers = (beta @ Tensor(idx.reshape(T_x, 1))).reshape(B, T_y)
    context = beta @ values
    return CrossResult(context, beta, centers, bounds, provisional)
