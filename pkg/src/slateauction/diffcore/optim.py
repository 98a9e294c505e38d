"""Adam optimizer with bias correction."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    """Per-run optimizer state; moment buffers mirror the parameter shapes."""

    learning_rate: float = 3e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    first_moment: dict = field(default_factory=dict)
    second_moment: dict = field(default_factory=dict)


def adam_step(state, params, grads):
    """One bias-corrected Adam update, in place on ``params``.

    ``params`` and ``grads`` are name-keyed maps of numpy-backed tensors and
    gradient arrays. Missing gradients count as zero (exact no-op for fresh
    moments). Shape mismatches are an argument error.
    """
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1**state.step
    corr2 = 1.0 - b2**state.step
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.data.shape:
            raise ValueError(f"gradient shape {g.shape} != param shape {p.data.shape} for {name}")
        m = state.first_moment.setdefault(name, np.zeros_like(p.data))
        v = state.second_moment.setdefault(name, np.zeros_like(p.data))
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / corr1
        v_hat = v / corr2
        p.data = p.data - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)


class Adam:
    """Convenience wrapper pulling gradients straight off the tensors."""

    def __init__(self, params, learning_rate=3e-3, beta1=0.9, beta2=0.999, epsilon=1e-8):
        self.params = dict(params)
        self.state = AdamState(learning_rate, beta1, beta2, epsilon)

    def step(self):
        grads = {
            name: p.grad for name, p in self.params.items() if p.grad is not None
        }
        adam_step(self.state, self.params, grads)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None
