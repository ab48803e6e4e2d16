"""
Adam with decoupled weight decay, and the linear warmup / linear decay schedule.
"""
from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional

import numpy as np

from hilat.errors import NonFiniteError, UsageError
from hilat.tensor import Tensor

BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-8


@dataclass
class AdamWState:
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def adamw_step(
    params: Mapping[str, Tensor],
    state: AdamWState,
    lr_t: float,
    weight_decay: float,
    grads: Optional[Mapping[str, np.ndarray]] = None,
) -> None:
    """
    One in-place update of every tensor with requires_grad set.

    A missing gradient counts as zero, so decay still applies. Frozen tensors
    are never touched.
    """
    trainable = {name: p for name, p in params.items() if p.requires_grad}
    resolved = {}
    for name, p in trainable.items():
        g = grads.get(name) if grads is not None else p.grad
        g = np.zeros_like(p.data) if g is None else np.asarray(g, dtype=np.float64)
        if g.shape != p.data.shape:
            raise UsageError(f"gradient for {name} has shape {g.shape}, parameter is {p.data.shape}")
        if not np.all(np.isfinite(g)):
            bad = int(np.size(g) - np.count_nonzero(np.isfinite(g)))
            raise NonFiniteError(f"{bad} non-finite gradient entries in {name} at step {state.step + 1}")
        resolved[name] = g

    state.step += 1
    bias1 = 1.0 - BETA1 ** state.step
    bias2 = 1.0 - BETA2 ** state.step
    for name, p in trainable.items():
        g = resolved[name]
        m = state.m.get(name)
        v = state.v.get(name)
        m = (1.0 - BETA1) * g if m is None else BETA1 * m + (1.0 - BETA1) * g
        v = (1.0 - BETA2) * g * g if v is None else BETA2 * v + (1.0 - BETA2) * g * g
        state.m[name] = m
        state.v[name] = v
        m_hat = m / bias1
        v_hat = v / bias2
        p.data = p.data - lr_t * m_hat / (np.sqrt(v_hat) + EPS) - lr_t * weight_decay * p.data


def lr_schedule(step: int, warmup_steps: int, total_steps: int, base_lr: float) -> float:
    """Linear ramp 0 -> base_lr over warmup, then linear decay to 0 at total_steps."""
    if not 1 <= step <= total_steps:
        raise UsageError(f"step {step} outside [1, {total_steps}]")
    if warmup_steps > total_steps:
        raise UsageError(f"warmup_steps ({warmup_steps}) exceeds total_steps ({total_steps})")
    if step <= warmup_steps:
        return base_lr * step / warmup_steps
    return base_lr * (total_steps - step) / (total_steps - warmup_steps)
