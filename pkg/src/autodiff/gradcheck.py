"""
Central finite-difference gradient checks.
"""
from collections.abc import Callable, Sequence
from typing import Optional

import numpy as np

from src.autodiff.tensor import Tensor, no_grad

DEFAULT_STEP: float = 1e-5


def relative_error(analytic: float, numeric: float, floor: float = 1e-6) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def numerical_gradient(
    loss_fn: Callable[[], Tensor],
    tensor: Tensor,
    index: tuple[int, ...],
    step: float = DEFAULT_STEP,
) -> float:
    original = tensor.data[index]
    with no_grad():
        tensor.data[index] = original + step
        upper = loss_fn().item()
        tensor.data[index] = original - step
        lower = loss_fn().item()
    tensor.data[index] = original
    return (upper - lower) / (2 * step)


def gradient_check(
    loss_fn: Callable[[], Tensor],
    tensors: Sequence[Tensor],
    step: float = DEFAULT_STEP,
    samples: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> float:
    """
    Largest relative error between analytic and central-difference gradients.

    Parameters:
    - loss_fn: Rebuilds the scalar loss from the current tensor values; must be deterministic.
    - tensors: Leaves to check; their gradients are reset.
    - samples: Check this many random entries across all tensors instead of every entry.
    """
    for t in tensors:
        t.zero_grad()
    loss_fn().backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in tensors]

    entries = [(k, index) for k, t in enumerate(tensors) for index in np.ndindex(t.shape)]
    if samples is not None and samples < len(entries):
        rng = rng or np.random.default_rng(0)
        entries = [entries[i] for i in sorted(rng.choice(len(entries), samples, replace=False))]

    worst = 0.0
    for k, index in entries:
        numeric = numerical_gradient(loss_fn, tensors[k], index, step)
        worst = max(worst, relative_error(float(analytic[k][index]), numeric))
    return worst
