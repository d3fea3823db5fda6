"""Multi-task binary cross entropy and normalized entropy.

Logs are natural logs throughout; the base cancels in NE anyway.
"""
from __future__ import annotations

import numpy as np

from causalgr.errors import ContractError
from causalgr.numeric import Tensor, clip, log, mul, sigmoid, sub, sum_

DEFAULT_CLAMP = 1e-7


def _cell_mask(mask: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != shape:
        mask = np.broadcast_to(mask[..., None] if mask.ndim == len(shape) - 1 else mask, shape)
    return mask


def multitask_bce(logits: Tensor, labels: np.ndarray, mask: np.ndarray,
                  clamp: float = DEFAULT_CLAMP) -> Tensor:
    """Mean BCE over the valid (position, task) cells.

    ``mask`` is ``[..., S]`` (all tasks of a position) or the full logits shape.
    Probabilities are clamped to ``[clamp, 1 - clamp]`` inside the logs only.
    """
    labels = np.asarray(labels)
    if labels.shape != logits.shape:
        raise ContractError(f"labels {labels.shape} do not match logits {logits.shape}")
    cells = _cell_mask(mask, logits.shape)
    n = int(cells.sum())
    if n == 0:
        raise ContractError("multitask_bce: no valid cells")
    dtype = logits.dtype
    p = clip(sigmoid(logits), clamp, 1.0 - clamp)
    y = labels.astype(dtype)
    w = cells.astype(dtype)
    per_cell = log(p) * Tensor(y * w) + log(sub(1.0, p)) * Tensor((1.0 - y) * w)
    return mul(sum_(per_cell), -1.0 / n)


def bce_values(probs: np.ndarray, labels: np.ndarray, clamp: float = DEFAULT_CLAMP) -> np.ndarray:
    p = np.clip(np.asarray(probs, dtype=np.float64), clamp, 1.0 - clamp)
    y = np.asarray(labels, dtype=np.float64)
    return -(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))


def binary_entropy(p: float) -> float:
    if p <= 0.0 or p >= 1.0:
        return 0.0
    return float(-(p * np.log(p) + (1.0 - p) * np.log(1.0 - p)))


def normalized_entropy(probs: np.ndarray, labels: np.ndarray, clamp: float = DEFAULT_CLAMP) -> float:
    """Mean BCE divided by the entropy of the empirical positive rate.

    1.0 for the constant base-rate predictor; lower is better.
    """
    labels = np.asarray(labels).reshape(-1)
    probs = np.asarray(probs, dtype=np.float64).reshape(-1)
    if labels.size == 0 or labels.min() == labels.max():
        raise ContractError("normalized_entropy needs both positive and negative labels")
    base = labels.mean()
    return float(bce_values(probs, labels, clamp).mean() / binary_entropy(base))


def stable_sigmoid(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
