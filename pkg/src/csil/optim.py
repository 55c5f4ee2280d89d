"""Masked SGD with momentum and decoupled weight decay.

The update, applied only where the mask is 1:

    v <- momentum * v + g
    p <- p - lr * v - lr * l2 * p

Entries with mask 0 keep their exact bit pattern, and so does their
velocity state.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .engine import ShapeError, Tensor


@dataclass(frozen=True)
class SgdConfig:
    learning_rate: float = 0.01
    momentum: float = 0.9
    l2_factor: float = 0.01

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.l2_factor < 0:
            raise ValueError(f"l2_factor must be non-negative, got {self.l2_factor}")


def sgd_step(param: np.ndarray, grad: np.ndarray, velocity: np.ndarray,
             mask: np.ndarray, cfg: SgdConfig) -> None:
    """One in-place masked update of a single parameter array."""
    if grad.shape != param.shape or velocity.shape != param.shape:
        raise ShapeError(f"sgd_step: grad/velocity shape does not match param {param.shape}")
    if mask.shape != param.shape:
        raise ShapeError(f"sgd_step: mask {mask.shape} does not match param {param.shape}")
    if not np.all((mask == 0.0) | (mask == 1.0)):
        raise ValueError("sgd_step: mask entries must be 0 or 1")
    active = mask == 1.0
    v_new = cfg.momentum * velocity + grad
    p_new = param - cfg.learning_rate * v_new - cfg.learning_rate * cfg.l2_factor * param
    velocity[...] = np.where(active, v_new, velocity)
    param[...] = np.where(active, p_new, param)


class MaskedSgd:
    """Tracks velocity per parameter and applies `sgd_step` to each."""

    def __init__(self, params: dict[str, Tensor], masks: dict[str, np.ndarray],
                 cfg: SgdConfig):
        for name, p in params.items():
            m = masks[name]
            if m.shape != p.shape:
                raise ShapeError(f"mask for {name!r} has shape {m.shape}, param {p.shape}")
            if not np.all((m == 0.0) | (m == 1.0)):
                raise ValueError(f"mask for {name!r} has entries outside {{0, 1}}")
        self.params = params
        self.masks = masks
        self.cfg = cfg
        self.velocity = {name: np.zeros_like(p.data) for name, p in params.items()}

    def step(self) -> None:
        for name, p in self.params.items():
            if p.grad is None:
                continue
            sgd_step(p.data, p.grad, self.velocity[name], self.masks[name], self.cfg)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()
