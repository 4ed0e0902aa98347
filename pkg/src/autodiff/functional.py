"""
Tensor operations that take several inputs or integer index arrays.
"""
from collections.abc import Sequence
from typing import Optional

import numpy as np
import numpy.typing as npt

from src.autodiff.tensor import Array, Tensor, as_tensor
from src.errors import ShapeError


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    reference = tensors[0].shape
    for t in tensors[1:]:
        other = tuple(s for i, s in enumerate(t.shape) if i != axis % t.ndim)
        if t.ndim != len(reference) or other != tuple(s for i, s in enumerate(reference) if i != axis % len(reference)):
            raise ShapeError("concat", reference, t.shape)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    return Tensor.from_op(
        np.concatenate([t.data for t in tensors], axis=axis), tensors,
        lambda g: tuple(np.split(g, splits, axis=axis)),
    )


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    for t in tensors[1:]:
        if t.shape != tensors[0].shape:
            raise ShapeError("stack", tensors[0].shape, t.shape)
    count = len(tensors)
    return Tensor.from_op(
        np.stack([t.data for t in tensors], axis=axis), tensors,
        lambda g: tuple(np.squeeze(part, axis=axis) for part in np.split(g, count, axis=axis)),
    )


def embedding(table: Tensor, indices: npt.ArrayLike) -> Tensor:
    """Rows of `table` at `indices`; repeated indices accumulate their gradients."""
    return table[np.asarray(indices, dtype=np.int64)]


def dropout(
    x: Tensor,
    rate: float,
    rng: Optional[np.random.Generator] = None,
    mask: Optional[npt.NDArray[np.bool_]] = None,
) -> Tensor:
    """
    Inverted dropout: kept units are scaled by 1/(1-rate) at training time.

    Without `rng` or `mask` (evaluation) or with rate 0 the input is returned unchanged.
    """
    if rate == 0.0 or (rng is None and mask is None):
        return x
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if mask is None:
        mask = rng.random(x.shape) >= rate
    elif mask.shape != x.shape:
        raise ShapeError("dropout", x.shape, mask.shape)
    scale = mask.astype(np.float64) / (1.0 - rate)
    return Tensor.from_op(x.data * scale, (x,), lambda g: (g * scale,))


def segment_sum(values: Tensor, segments: npt.ArrayLike, n_segments: int) -> Tensor:
    """Sum rows of `values` into `n_segments` buckets given by `segments`."""
    segments = np.asarray(segments, dtype=np.int64)
    if len(segments) != values.shape[0]:
        raise ShapeError("segment_sum", values.shape, segments.shape)
    out = np.zeros((n_segments,) + values.shape[1:])
    np.add.at(out, segments, values.data)
    return Tensor.from_op(out, (values,), lambda g: (g[segments],))


def segment_softmax(scores: Tensor, segments: npt.ArrayLike, n_segments: int) -> Tensor:
    """Softmax of a 1-D score vector within each segment."""
    segments = np.asarray(segments, dtype=np.int64)
    if scores.ndim != 1 or len(segments) != scores.shape[0]:
        raise ShapeError("segment_softmax", scores.shape, segments.shape)
    peak = np.full(n_segments, -np.inf)
    np.maximum.at(peak, segments, scores.data)
    e = np.exp(scores.data - peak[segments])
    totals = np.zeros(n_segments)
    np.add.at(totals, segments, e)
    out = e / totals[segments]

    def backward(g: Array) -> tuple[Array]:
        weighted = np.zeros(n_segments)
        np.add.at(weighted, segments, g * out)
        return (out * (g - weighted[segments]),)

    return Tensor.from_op(out, (scores,), backward)


def bce_with_logits(logits: Tensor, targets: npt.ArrayLike) -> Tensor:
    """Mean binary cross-entropy computed from logits."""
    y = np.asarray(targets, dtype=np.float64)
    if y.shape != logits.shape:
        raise ShapeError("bce_with_logits", logits.shape, y.shape)
    z = logits.data
    loss = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))
    n = max(z.size, 1)
    probability = 0.5 * (1.0 + np.tanh(0.5 * z))
    return Tensor.from_op(np.asarray(loss.mean()), (logits,), lambda g: (g * (probability - y) / n,))


def mse(predictions: Tensor, targets: npt.ArrayLike) -> Tensor:
    target = as_tensor(np.asarray(targets, dtype=np.float64))
    if target.shape != predictions.shape:
        raise ShapeError("mse", predictions.shape, target.shape)
    return ((predictions - target) ** 2).mean()


def l2_penalty(parameters: Sequence[Tensor]) -> Tensor:
    """Sum of squared entries of every parameter."""
    total = Tensor(0.0)
    for p in parameters:
        total = total + (p * p).sum()
    return total
