"""ADAM optimizer step and cosine learning-rate schedule."""

import logging
import math

import numpy as np

from minehaul.errors import InvalidInputError, TrainingDivergenceError
from minehaul.neural.params import ParamStore

logger = logging.getLogger(__name__)


def adam_step(
    store: ParamStore,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> ParamStore:
    """Apply one bias-corrected ADAM update and clear the gradients.

    Args:
        store: Parameters with gradients populated for this step
        lr: Learning rate
        beta1: First-moment decay
        beta2: Second-moment decay
        eps: Denominator floor

    Returns:
        The same store, updated in place

    Raises:
        TrainingDivergenceError: If any gradient is non-finite; nothing is updated
    """
    if not store.grads_finite():
        bad = [name for name, g in store.grads.items() if not np.all(np.isfinite(g))]
        raise TrainingDivergenceError(
            f"non-finite gradient in {bad[:3]}", details={"parameters": bad}
        )
    store.step += 1
    t = store.step
    correction1 = 1.0 - beta1**t
    correction2 = 1.0 - beta2**t
    for name, p in store.params.items():
        g = store.grads[name]
        m = store.m[name]
        v = store.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= lr * (m / correction1) / (np.sqrt(v / correction2) + eps)
    store.zero_grad()
    return store


def cosine_lr(step: int, total_steps: int, lr0: float = 2e-4) -> float:
    """Cosine-decayed learning rate: lr0 at step 0, zero at ``total_steps``."""
    if total_steps < 0 or step < 0 or step > total_steps:
        raise InvalidInputError(f"step {step} outside [0, {total_steps}]")
    if total_steps == 0:
        return lr0
    return lr0 * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))
