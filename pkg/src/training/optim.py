"""
MAE objective and the AdamW optimizer
"""

from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np

from src.core.errors import NumericFailureError, ShapeMismatchError
from src.core.layers import Parameter
from src.core.tensor import Tensor


def mae_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean over the batch of |pred - target|"""
    if pred.shape != target.shape:
        raise ShapeMismatchError(f"Prediction {pred.shape} and target {target.shape} differ")
    return (pred - target).abs().mean()


@dataclass
class AdamWState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    weight_decay: float = 1e-4
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def adamw_step(state: AdamWState, params: Iterable[Tuple[str, Parameter]],
               grads: Optional[Dict[str, np.ndarray]] = None) -> AdamWState:
    """One decoupled-decay Adam update, in place on the parameters.

    Gradients default to each parameter's `.grad`; a missing gradient counts
    as zero. Only parameters flagged `decay` receive weight decay.
    """
    params = list(params)
    for name, param in params:
        grad = grads[name] if grads is not None else param.grad
        if grad is not None and not np.all(np.isfinite(grad)):
            raise NumericFailureError(f"Non-finite gradient for parameter '{name}'")

    state.step += 1
    b1, b2 = state.beta1, state.beta2
    correction1 = 1.0 - b1 ** state.step
    correction2 = 1.0 - b2 ** state.step
    for name, param in params:
        grad = grads[name] if grads is not None else param.grad
        if grad is None:
            grad = np.zeros_like(param.data)
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(param.data)
            v = np.zeros_like(param.data)
        m = b1 * m + (1.0 - b1) * grad
        v = b2 * v + (1.0 - b2) * grad * grad
        state.m[name], state.v[name] = m, v

        m_hat = m / correction1
        v_hat = v / correction2
        keep = 1.0 - state.lr * (state.weight_decay if getattr(param, "decay", False) else 0.0)
        update = state.lr * (m_hat / (np.sqrt(v_hat) + state.epsilon))
        param.data = (param.data * keep - update).astype(param.data.dtype, copy=False)
    return state


class AdamW:
    """Optimizer bound to a model's named parameters"""

    def __init__(self, named_params: Iterable[Tuple[str, Parameter]], lr: float = 1e-4,
                 weight_decay: float = 1e-4, beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8):
        self.params: List[Tuple[str, Parameter]] = list(named_params)
        self.state = AdamWState(lr=lr, beta1=beta1, beta2=beta2, epsilon=epsilon, weight_decay=weight_decay)

    def step(self):
        adamw_step(self.state, self.params)

    def zero_grad(self):
        for _, param in self.params:
            param.zero_grad()
