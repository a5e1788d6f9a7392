from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: AdamState) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update. Returns new parameter arrays and a new state."""
    t = state.step_count + 1
    m_new, v_new, p_new = {}, {}, {}
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        m = state.beta1 * state.first_moment.get(name, 0.0) + (1 - state.beta1) * g
        v = state.beta2 * state.second_moment.get(name, 0.0) + (1 - state.beta2) * g * g
        m_new[name], v_new[name] = m, v
        p_new[name] = p - state.lr * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
    return p_new, replace(state, step_count=t, first_moment=m_new, second_moment=v_new)
