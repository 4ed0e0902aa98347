from collections.abc import Mapping

import numpy as np
import numpy.typing as npt

from src.autodiff.tensor import Tensor


def adam_update(
    param: npt.NDArray[np.float64],
    grad: npt.NDArray[np.float64],
    m: npt.NDArray[np.float64],
    v: npt.NDArray[np.float64],
    step: int,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One bias-corrected Adam update applied in place to `param`, `m` and `v`; `step` starts at 1."""
    if lr <= 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    m *= beta1
    m += (1 - beta1) * grad
    v *= beta2
    v += (1 - beta2) * grad * grad
    m_hat = m / (1 - beta1 ** step)
    v_hat = v / (1 - beta2 ** step)
    param -= lr * m_hat / (np.sqrt(v_hat) + eps)


class Adam:
    """
    Adam over a named parameter set.

    Parameters without a gradient in a step are skipped; their moments stay untouched.
    """

    def __init__(
        self,
        parameters: Mapping[str, Tensor],
        lr: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ) -> None:
        if lr <= 0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        self.parameters = dict(parameters)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = {name: np.zeros_like(p.data) for name, p in self.parameters.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in self.parameters.items()}
        self.t = 0

    def step(self) -> None:
        self.t += 1
        for name, p in self.parameters.items():
            if p.grad is None:
                continue
            adam_update(p.data, p.grad, self.m[name], self.v[name], self.t, self.lr, self.beta1, self.beta2, self.eps)

    def zero_grad(self) -> None:
        for p in self.parameters.values():
            p.grad = None

    def load_state(self, m: Mapping[str, np.ndarray], v: Mapping[str, np.ndarray], step: int) -> None:
        for name in self.parameters:
            if name in m:
                self.m[name] = np.array(m[name], dtype=np.float64)
                self.v[name] = np.array(v[name], dtype=np.float64)
        self.t = step
