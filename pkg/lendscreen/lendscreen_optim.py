from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional, Tuple

import numpy as np

from .lendscreen_errors import ShapeError
from .lendscreen_tensor import Tensor


@dataclass
class AdamState:
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    first_moment: Dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: Mapping[str, Tensor],
              grads: Mapping[str, Optional[np.ndarray]],
              state: AdamState) -> Tuple[Mapping[str, Tensor], AdamState]:
    """One bias-corrected Adam update, applied in place to `params`.

    Parameters without a gradient keep their value but their moments still
    decay, as if the gradient were zero."""
    for name, param in params.items():
        grad = grads.get(name)
        if grad is not None and np.shape(grad) != param.shape:
            raise ShapeError(f"gradient for '{name}' has the wrong shape",
                             param.shape, np.shape(grad))

    state.step += 1
    correction1 = 1.0 - state.beta1 ** state.step
    correction2 = 1.0 - state.beta2 ** state.step
    for name, param in params.items():
        grad = grads.get(name)
        if grad is None:
            grad = np.zeros_like(param.data)
        first = state.first_moment.get(name)
        second = state.second_moment.get(name)
        if first is None:
            first = np.zeros_like(param.data)
            second = np.zeros_like(param.data)
        first = state.beta1 * first + (1.0 - state.beta1) * grad
        second = state.beta2 * second + (1.0 - state.beta2) * grad * grad
        state.first_moment[name] = first
        state.second_moment[name] = second
        param.data -= state.learning_rate * (first / correction1) / (
            np.sqrt(second / correction2) + state.epsilon)
    return params, state


class AdamOptimizer(object):
    """Adam over a named parameter mapping; gradients are read from `.grad`."""

    def __init__(self, params: Mapping[str, Tensor], learning_rate=0.001,
                 beta1=0.9, beta2=0.999, epsilon=1e-8):
        self.params = params
        self.state = AdamState(learning_rate=learning_rate, beta1=beta1,
                               beta2=beta2, epsilon=epsilon)

    def step(self):
        adam_step(self.params,
                  {name: param.grad for name, param in self.params.items()},
                  self.state)

    def zero_grad(self):
        for param in self.params.values():
            param.grad = None
