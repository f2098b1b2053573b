"""ADAM with bias correction, plus global gradient-norm clipping."""
from typing import Dict, Mapping

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from flmarket.core.exceptions import InvalidInputError


class AdamState(BaseModel):
    lr: float = Field(1e-3, gt=0.0, description="Learning rate")
    beta1: float = Field(0.9, ge=0.0, lt=1.0)
    beta2: float = Field(0.999, ge=0.0, lt=1.0)
    eps: float = Field(1e-8, gt=0.0)
    step: int = Field(0, ge=0)
    first_moment: Dict[str, np.ndarray] = Field(default_factory=dict)
    second_moment: Dict[str, np.ndarray] = Field(default_factory=dict)

    model_config = ConfigDict(arbitrary_types_allowed=True)


def adam_step(params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray],
              state: AdamState) -> Dict[str, np.ndarray]:
    """
    One ADAM update.

    Args:
        params: parameter name -> current values
        grads: parameter name -> gradient; parameters without an entry are left unchanged
        state: moment accumulators, updated in place

    Returns:
        Dict[str, np.ndarray]: new parameter values (fresh arrays)
    """
    state.step += 1
    correction1 = 1.0 - state.beta1 ** state.step
    correction2 = 1.0 - state.beta2 ** state.step
    updated: Dict[str, np.ndarray] = {}
    for name, value in params.items():
        grad = grads.get(name)
        if grad is None:
            updated[name] = value.copy()
            continue
        if grad.shape != value.shape:
            raise InvalidInputError(f"gradient for {name} has shape {grad.shape}, parameter {value.shape}")
        m = state.first_moment.get(name, np.zeros_like(value))
        v = state.second_moment.get(name, np.zeros_like(value))
        m = state.beta1 * m + (1.0 - state.beta1) * grad
        v = state.beta2 * v + (1.0 - state.beta2) * grad ** 2
        state.first_moment[name] = m
        state.second_moment[name] = v
        updated[name] = value - state.lr * (m / correction1) / (np.sqrt(v / correction2) + state.eps)
    return updated


def clip_gradients(grads: Mapping[str, np.ndarray], max_norm: float) -> Dict[str, np.ndarray]:
    """Scale all gradients together so their global L2 norm is at most max_norm."""
    total = gradient_norm(grads)
    if max_norm <= 0 or total <= max_norm:
        return dict(grads)
    factor = max_norm / total
    return {name: g * factor for name, g in grads.items()}


def gradient_norm(grads: Mapping[str, np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(g ** 2)) for g in grads.values())))
