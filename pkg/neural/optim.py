"""
Оптимизатор Adam с коррекцией смещения моментов
"""
from dataclasses import dataclass, field
from typing import Dict

import numpy as np

from .params import ParamStore


@dataclass
class AdamState:
    """Моменты m, v по каждому параметру и счетчик шагов t"""
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_store(cls, store: ParamStore, **kwargs) -> 'AdamState':
        state = cls(**kwargs)
        for name, value in store.params.items():
            state.m[name] = np.zeros_like(value)
            state.v[name] = np.zeros_like(value)
        return state


def adam_step(store: ParamStore, state: AdamState, lr: float) -> None:
    """
    Один шаг Adam; параметры обновляются на месте, градиенты затем обнуляются
    """
    state.t += 1
    bias1 = 1.0 - state.beta1 ** state.t
    bias2 = 1.0 - state.beta2 ** state.t

    for name, param in store.params.items():
        grad = store.grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(param)
            state.v[name] = np.zeros_like(param)
        m, v = state.m[name], state.v[name]

        m *= state.beta1
        m += (1.0 - state.beta1) * grad
        v *= state.beta2
        v += (1.0 - state.beta2) * (grad * grad)

        m_hat = m / bias1
        v_hat = v / bias2
        param -= lr * m_hat / (np.sqrt(v_hat) + state.eps)

    store.zero_grad()
