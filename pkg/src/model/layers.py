"""
Neural network building blocks on top of `src.autodiff`.

Modules register parameters by attribute: a `Tensor` with `requires_grad`, a
child `Module`, or a list/dict of modules. `named_parameters` walks them in
attribute order, giving stable dotted names for checkpoints.
"""
from collections.abc import Iterator
from dataclasses import dataclass
from typing import Optional

import numpy as np

from src.autodiff.functional import dropout, stack
from src.autodiff.tensor import Tensor


@dataclass
class ForwardContext:
    """Training flag and dropout randomness of one forward pass."""
    training: bool = False
    rng: Optional[np.random.Generator] = None

    def dropout(self, x: Tensor, rate: float) -> Tensor:
        return dropout(x, rate, self.rng if self.training else None)


EVAL = ForwardContext()


class Module:

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, list):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")
            elif isinstance(value, dict):
                for key, item in value.items():
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{getattr(key, 'value', key)}.")

    def parameters(self) -> dict[str, Tensor]:
        return dict(self.named_parameters())


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> Tensor:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-limit, limit, size=(fan_in, fan_out)), requires_grad=True)


class Linear(Module):
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator, bias: bool = True) -> None:
        self.weight = glorot(rng, in_dim, out_dim)
        self.bias = Tensor(np.zeros(out_dim), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        out = x @ self.weight
        return out + self.bias if self.bias is not None else out


class MLP(Module):
    """One hidden layer with relu and dropout."""

    def __init__(self, in_dim: int, hidden_dim: int, out_dim: int, rng: np.random.Generator, dropout_rate: float = 0.0) -> None:
        self.hidden = Linear(in_dim, hidden_dim, rng)
        self.output = Linear(hidden_dim, out_dim, rng)
        self.dropout_rate = dropout_rate

    def __call__(self, x: Tensor, ctx: ForwardContext = EVAL) -> Tensor:
        return self.output(ctx.dropout(self.hidden(x).relu(), self.dropout_rate))


class LSTM(Module):
    """
    Single-layer LSTM over a list of (batch, in_dim) steps.

    Gate order in the fused weights: input, forget, cell, output.
    """

    def __init__(self, in_dim: int, hidden_dim: int, rng: np.random.Generator) -> None:
        self.hidden_dim = hidden_dim
        self.input_weight = glorot(rng, in_dim, 4 * hidden_dim)
        self.hidden_weight = glorot(rng, hidden_dim, 4 * hidden_dim)
        bias = np.zeros(4 * hidden_dim)
        bias[hidden_dim:2 * hidden_dim] = 1.0
        self.bias = Tensor(bias, requires_grad=True)

    def __call__(self, steps: list[Tensor], masks: Optional[list[np.ndarray]] = None) -> list[Tensor]:
        """
        Hidden state after every step.

        `masks[t]` (batch,) marks real steps; a padded step keeps the previous state.
        """
        batch = steps[0].shape[0]
        d = self.hidden_dim
        h = Tensor(np.zeros((batch, d)))
        c = Tensor(np.zeros((batch, d)))
        outputs = []
        for t, x in enumerate(steps):
            gates = x @ self.input_weight + h @ self.hidden_weight + self.bias
            i = gates[:, 0:d].sigmoid()
            f = gates[:, d:2 * d].sigmoid()
            g = gates[:, 2 * d:3 * d].tanh()
            o = gates[:, 3 * d:4 * d].sigmoid()
            c_new = f * c + i * g
            h_new = o * c_new.tanh()
            if masks is not None:
                keep = masks[t].astype(np.float64)[:, None]
                c_new = c_new * keep + c * (1.0 - keep)
                h_new = h_new * keep + h * (1.0 - keep)
            h, c = h_new, c_new
            outputs.append(h)
        return outputs


class TemporalAttention(Module):
    """Softmax over steps of theta_v . leaky_relu(theta_w h_t)."""

    def __init__(self, dim: int, rng: np.random.Generator) -> None:
        self.theta_w = Linear(dim, dim, rng)
        self.theta_v = glorot(rng, dim, 1)

    def weights(self, states: list[Tensor]) -> Tensor:
        scores = [(self.theta_w(h).leaky_relu(0.2) @ self.theta_v) for h in states]
        return stack([s.reshape(s.shape[0]) for s in scores], axis=1).softmax(axis=1)

    def __call__(self, states: list[Tensor]) -> tuple[Tensor, Tensor]:
        """Return (h_T + sum_t alpha_t h_t, alpha)."""
        alpha = self.weights(states)
        pooled = states[-1]
        for t, h in enumerate(states):
            pooled = pooled + alpha[:, t:t + 1] * h
        return pooled, alpha


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5) -> None:
        self.gamma = Tensor(np.ones(dim), requires_grad=True)
        self.beta = Tensor(np.zeros(dim), requires_grad=True)
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        centered = x - x.mean(axis=-1, keepdims=True)
        variance = (centered * centered).mean(axis=-1, keepdims=True)
        return centered * (variance + self.eps) ** -0.5 * self.gamma + self.beta


def positional_encoding(length: int, dim: int) -> np.ndarray:
    """Sinusoidal positions, (length, dim)."""
    positions = np.arange(length)[:, None]
    rates = np.exp(-np.log(10000.0) * (np.arange(0, dim, 2) / dim))
    encoding = np.zeros((length, dim))
    encoding[:, 0::2] = np.sin(positions * rates)
    encoding[:, 1::2] = np.cos(positions * rates[: dim // 2])
    return encoding


_MASKED: float = -1e9


class TransformerEncoderLayer(Module):
    """Post-norm multi-head self-attention and feed-forward block over (batch, length, dim)."""

    def __init__(self, dim: int, heads: int, rng: np.random.Generator, dropout_rate: float = 0.0) -> None:
        if dim % heads:
            raise ValueError(f"dim {dim} is not divisible by {heads} heads")
        self.heads = heads
        self.query = Linear(dim, dim, rng)
        self.key = Linear(dim, dim, rng)
        self.value = Linear(dim, dim, rng)
        self.proj = Linear(dim, dim, rng)
        self.norm1 = LayerNorm(dim)
        self.feed_forward = MLP(dim, dim, dim, rng, dropout_rate)
        self.norm2 = LayerNorm(dim)
        self.dropout_rate = dropout_rate

    def _split(self, x: Tensor) -> Tensor:
        batch, length, dim = x.shape
        return x.reshape(batch, length, self.heads, dim // self.heads).transpose(0, 2, 1, 3)

    def attention_weights(self, x: Tensor, valid: np.ndarray) -> Tensor:
        """(batch, heads, length, length) weights; padded keys get zero weight."""
        q, k = self._split(self.query(x)), self._split(self.key(x))
        scale = 1.0 / np.sqrt(q.shape[-1])
        bias = np.where(valid, 0.0, _MASKED)[:, None, None, :]
        return ((q @ k.transpose(0, 1, 3, 2)) * scale + bias).softmax(axis=-1)

    def __call__(self, x: Tensor, valid: np.ndarray, ctx: ForwardContext = EVAL) -> Tensor:
        batch, length, dim = x.shape
        weights = self.attention_weights(x, valid)
        attended = (weights @ self._split(self.value(x))).transpose(0, 2, 1, 3).reshape(batch, length, dim)
        x = self.norm1(x + ctx.dropout(self.proj(attended), self.dropout_rate))
        return self.norm2(x + ctx.dropout(self.feed_forward(x, ctx), self.dropout_rate))
