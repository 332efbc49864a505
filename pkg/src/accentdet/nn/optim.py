"""Adam optimizer with L2 weight decay and global-norm gradient clipping."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict

import numpy as np

from .. import kernels
from .tensor import Tensor


@dataclass
class Adam:
    """Adam over a named parameter dict.

    The weight decay term is folded into the gradient before the moment
    updates (grad' = grad + wd * param), matching the framework-default
    Adam the training recipe was tuned with.
    """

    params: Dict[str, Tensor]
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-5
    step_count: int = 0
    _m: Dict[str, np.ndarray] = field(default_factory=dict)
    _v: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        for name, p in self.params.items():
            self._m[name] = np.zeros_like(p.data)
            self._v[name] = np.zeros_like(p.data)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def clip_global_norm(self, max_norm: float) -> float:
        """Scale all gradients so their joint L2 norm is at most max_norm."""
        total = 0.0
        for p in self.params.values():
            if p.grad is not None:
                total += float(np.sum(p.grad.astype(np.float64) ** 2))
        norm = float(np.sqrt(total))
        if norm > max_norm and norm > 0:
            factor = max_norm / norm
            for p in self.params.values():
                if p.grad is not None:
                    p.grad *= factor
        return norm

    def step(self) -> None:
        self.step_count += 1
        for name, p in self.params.items():
            if p.grad is None:
                continue
            kernels.adam_update(
                p.data,
                np.ascontiguousarray(p.grad),
                self._m[name],
                self._v[name],
                self.step_count,
                self.lr,
                self.beta1,
                self.beta2,
                self.eps,
                self.weight_decay,
            )
