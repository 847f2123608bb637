"""Adam with bias correction, per-parameter state."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, ShapeError
from .tensor import Tensor


@dataclass
class AdamState:
    m: np.ndarray
    s: np.ndarray
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, param, **hyper):
        shape = param.shape
        return cls(np.zeros(shape), np.zeros(shape), **hyper)


def adam_step(param: Tensor, grad, state: AdamState):
    """One in-place Adam update of ``param``; returns ``(param, state)``."""
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != param.shape or state.m.shape != param.shape or state.s.shape != param.shape:
        raise ShapeError("adam_step", param.shape, grad.shape, state.m.shape)
    if state.t < 0:
        raise ContractError(f"negative Adam step counter {state.t}")
    state.t += 1
    state.m *= state.beta1
    state.m += (1.0 - state.beta1) * grad
    state.s *= state.beta2
    state.s += (1.0 - state.beta2) * grad * grad
    m_hat = state.m / (1.0 - state.beta1 ** state.t)
    s_hat = state.s / (1.0 - state.beta2 ** state.t)
    param.data -= state.lr * m_hat / (np.sqrt(s_hat) + state.eps)
    return param, state


@dataclass
class Adam:
    """Named-parameter Adam. The registry must cover exactly the names it is stepped with."""

    params: dict
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    states: dict = field(default_factory=dict)

    def __post_init__(self):
        for name, p in self.params.items():
            if name not in self.states:
                self.states[name] = AdamState.zeros_like(
                    p, lr=self.lr, beta1=self.beta1, beta2=self.beta2, eps=self.eps
                )

    @property
    def t(self):
        ts = {s.t for s in self.states.values()}
        return ts.pop() if len(ts) == 1 else max(ts, default=0)

    def step(self, grads: dict):
        if set(grads) != set(self.params):
            missing = sorted(set(self.params) - set(grads))
            extra = sorted(set(grads) - set(self.params))
            raise ContractError(f"gradient names differ from registry: missing={missing} extra={extra}")
        for name, p in self.params.items():
            adam_step(p, grads[name], self.states[name])
