"""Explicit randomness for the model.

Every stochastic draw inside the model goes through a :class:`Noise` object
owned by the caller; there is no hidden global RNG state. A recording noise
source can be replayed so that two forward passes see identical epsilon and
Bernoulli draws (used for finite-difference gradient checks).
"""
from __future__ import annotations

import numpy as np
import torch


class Noise:
    def __init__(self, seed: int | None = 0, record: bool = False):
        self.generator = torch.Generator()
        if seed is not None:
            self.generator.manual_seed(int(seed))
        self.record = record
        self.draws: list[torch.Tensor] = []

    def normal(self, shape, dtype=torch.float32) -> torch.Tensor:
        eps = torch.randn(shape, generator=self.generator, dtype=dtype)
        if self.record:
            self.draws.append(eps)
        return eps

    def uniform(self, shape, dtype=torch.float32) -> torch.Tensor:
        u = torch.rand(shape, generator=self.generator, dtype=dtype)
        if self.record:
            self.draws.append(u)
        return u

    def bernoulli(self, p: float, shape, dtype=torch.float32) -> torch.Tensor:
        return (self.uniform(shape, dtype) < p).to(dtype)

    def replay(self) -> "ReplayNoise":
        return ReplayNoise(self.draws)


class ReplayNoise(Noise):
    """Returns previously recorded draws in order."""

    def __init__(self, draws):
        self.draws = list(draws)
        self._pos = 0
        self.record = False

    def _next(self, shape, dtype):
        if self._pos >= len(self.draws):
            raise RuntimeError("replay exhausted: forward pass drew more noise than recorded")
        d = self.draws[self._pos]
        self._pos += 1
        if tuple(d.shape) != tuple(shape):
            raise RuntimeError(f"replay shape mismatch: recorded {tuple(d.shape)}, requested {tuple(shape)}")
        return d.to(dtype)

    def normal(self, shape, dtype=torch.float32):
        return self._next(shape, dtype)

    def uniform(self, shape, dtype=torch.float32):
        return self._next(shape, dtype)


def step_seed(base_seed: int, iteration: int, stream: int = 0) -> int:
    """Deterministic 63-bit seed for one training step."""
    return int(np.random.SeedSequence([int(base_seed), int(iteration), int(stream)]).generate_state(1, np.uint64)[0] >> 1)
