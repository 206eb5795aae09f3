"""Adam updates and critic weight clipping, both applied in place."""

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError


@dataclass
class AdamState:
    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError(f"learning rate must be positive, got {self.learning_rate}")


def adam_step(params, grads, state):
    """One Adam update of every array in ``params`` (modified in place).

    Moments are created lazily as zeros on the first step. A non-finite
    gradient aborts before anything is modified.
    """
    if set(grads) != set(params):
        missing = sorted(set(params) - set(grads))
        extra = sorted(set(grads) - set(params))
        raise KeyError(f"gradient/parameter key mismatch: missing={missing} extra={extra}")
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {name!r}")

    state.t += 1
    b1, b2 = state.beta1, state.beta2
    correction1 = 1.0 - b1**state.t
    correction2 = 1.0 - b2**state.t
    for name, p in params.items():
        g = grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        m_hat = m / correction1
        v_hat = v / correction2
        p -= state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return params, state


def clip_params(params, bound, exempt=()):
    """Clamp every entry to [-bound, bound]; names ending in an ``exempt`` suffix are skipped."""
    if not bound > 0:
        raise ValueError(f"clip bound must be positive, got {bound}")
    for name, p in params.items():
        if exempt and name.endswith(tuple(exempt)):
            continue
        np.clip(p, -bound, bound, out=p)
    return params
