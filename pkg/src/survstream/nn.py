"""Tiny layer containers over the autodiff core.

Initialization is uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)] from a caller
supplied numpy Generator, so a fixed seed reproduces every weight bit for bit.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad


def init_weight(rng: np.random.Generator, d_in: int, d_out: int) -> np.ndarray:
    limit = 1.0 / np.sqrt(d_in)
    return rng.uniform(-limit, limit, size=(d_in, d_out))


class Linear:
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator,
                 zero_init: bool = False):
        w = np.zeros((d_in, d_out)) if zero_init else init_weight(rng, d_in, d_out)
        self.w = ad.Tensor(w, requires_grad=True)
        self.b = ad.Tensor(np.zeros((1, d_out)), requires_grad=True)
        self.d_in = d_in
        self.d_out = d_out

    def __call__(self, x: ad.Tensor) -> ad.Tensor:
        return ad.linear(x, self.w, self.b)

    def parameters(self, prefix: str) -> dict[str, ad.Tensor]:
        return {f"{prefix}.w": self.w, f"{prefix}.b": self.b}


class MLP2:
    """Two-layer feed-forward block with ReLU in between."""

    def __init__(self, d_in: int, d_hidden: int, d_out: int,
                 rng: np.random.Generator, zero_output: bool = False):
        self.fc1 = Linear(d_in, d_hidden, rng)
        self.fc2 = Linear(d_hidden, d_out, rng, zero_init=zero_output)

    def __call__(self, x: ad.Tensor) -> ad.Tensor:
        return self.fc2(ad.relu(self.fc1(x)))

    def parameters(self, prefix: str) -> dict[str, ad.Tensor]:
        return {**self.fc1.parameters(f"{prefix}.fc1"),
                **self.fc2.parameters(f"{prefix}.fc2")}
