"""Parameter initialization helpers."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, parameter


def uniform_fan_in(rng: np.random.Generator, shape: tuple, fan_in: int, dtype, name: str) -> Tensor:
    """uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) weight matrix."""
    bound = 1.0 / np.sqrt(max(fan_in, 1))
    data = rng.uniform(-bound, bound, size=shape).astype(dtype)
    return parameter(data, name)


def zeros(shape: tuple, dtype, name: str) -> Tensor:
    return parameter(np.zeros(shape, dtype=dtype), name)


def lstm_bias(hidden: int, dtype, name: str) -> Tensor:
    """Gate bias [4H], forget slice at +1 for early-training stability."""
    b = np.zeros(4 * hidden, dtype=dtype)
    b[hidden : 2 * hidden] = 1.0
    return parameter(b, name)
