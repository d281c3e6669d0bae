"""Worst-step sequence loss.

For per-step errors e_t = pred_t - truth_t the loss in "gamma" mode is

    gamma * log( sum_t exp(e_t^2 / gamma) )

a smooth upper envelope of the worst squared step error: it is always
within [max e^2, max e^2 + gamma * log J].  As gamma -> 0 it converges to
max_t e_t^2, implemented directly as the "limit" mode whose gradient is
2 * e at the worst step only (ties resolved to the smallest index).
Plain mean squared error is kept as the "mse" mode for ablations.

Per-step weights alpha_t (the softmax of e_t^2 / gamma) are reported so the
caller can see where the loss is concentrating.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BadLength, NonFinite

MODES = ("limit", "gamma", "mse")


@dataclass(frozen=True)
class LossConfig:
    mode: str = "limit"
    gamma: float | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.mode == "gamma":
            if self.gamma is None or not (self.gamma > 0.0):
                raise ValueError("gamma mode needs gamma > 0")
        elif self.gamma is not None:
            raise ValueError(f"mode {self.mode!r} takes no gamma")

    @classmethod
    def from_string(cls, text: str) -> "LossConfig":
        """Parse 'limit', 'mse' or 'gamma:<float>'."""
        text = text.strip()
        if text.startswith("gamma:"):
            return cls("gamma", float(text.split(":", 1)[1]))
        return cls(text)

    def describe(self) -> str:
        return f"gamma:{self.gamma!r}" if self.mode == "gamma" else self.mode


@dataclass(frozen=True)
class LossValue:
    value: float
    alpha: np.ndarray  # per-step weights, nonnegative, sum to 1
    argmax_t: int      # index of the largest squared error (first on ties)


def _check(pred: np.ndarray, truth: np.ndarray) -> np.ndarray:
    if pred.shape != truth.shape:
        raise BadLength(f"pred {pred.shape} vs truth {truth.shape}")
    if pred.shape[-1] < 2:
        raise BadLength("sequence loss needs length >= 2")
    e = pred - truth
    if not np.all(np.isfinite(e)):
        raise NonFinite("non-finite prediction or truth")
    return e


def loss(pred, truth, cfg: LossConfig) -> LossValue:
    e = _check(np.asarray(pred, dtype=np.float64).ravel(),
               np.asarray(truth, dtype=np.float64).ravel())
    sq = e * e
    t = int(np.argmax(sq))
    if cfg.mode == "mse":
        alpha = np.full(len(sq), 1.0 / len(sq))
        return LossValue(float(sq.mean()), alpha, t)
    if cfg.mode == "limit":
        alpha = np.zeros(len(sq))
        alpha[t] = 1.0
        return LossValue(float(sq[t]), alpha, t)
    m = sq[t]
    # Max is subtracted before exponentiating; one term is exactly exp(0),
    # so the log argument is >= 1 and the value is >= m exactly.
    ex = np.exp((sq - m) / cfg.gamma)
    alpha = ex / ex.sum()
    return LossValue(float(m + cfg.gamma * np.log(ex.sum())), alpha, t)


def backward(pred, truth, cfg: LossConfig) -> np.ndarray:
    """d loss / d pred; equals alpha * 2e in every mode."""
    p = np.asarray(pred, dtype=np.float64).ravel()
    t = np.asarray(truth, dtype=np.float64).ravel()
    e = _check(p, t)
    return loss(p, t, cfg).alpha * 2.0 * e


def batch_loss(pred: np.ndarray, truth: np.ndarray, cfg: LossConfig) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean per-window loss over a (batch, J) block.

    Returns (mean value, gradient wrt pred of the mean, per-window values).
    Vectorised equivalent of applying `loss`/`backward` row by row.
    """
    e = pred - truth
    if not np.all(np.isfinite(e)):
        raise NonFinite("non-finite prediction or truth in batch")
    if pred.shape[1] < 2:
        raise BadLength("sequence loss needs length >= 2")
    sq = e * e
    n = pred.shape[0]
    if cfg.mode == "mse":
        values = sq.mean(axis=1)
        grad = 2.0 * e / (sq.shape[1] * n)
    elif cfg.mode == "limit":
        t = np.argmax(sq, axis=1)
        values = sq[np.arange(n), t]
        grad = np.zeros_like(e)
        grad[np.arange(n), t] = 2.0 * e[np.arange(n), t] / n
    else:
        m = sq.max(axis=1, keepdims=True)
        ex = np.exp((sq - m) / cfg.gamma)
        values = m[:, 0] + cfg.gamma * np.log(ex.sum(axis=1))
        alpha = ex / ex.sum(axis=1, keepdims=True)
        grad = alpha * 2.0 * e / n
    return float(values.mean()), grad, values
