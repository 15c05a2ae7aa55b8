"""Parameter containers with name-seeded initialisation."""
from __future__ import annotations

import zlib
from typing import Iterator

import numpy as np

from .tensor import Tensor, default_dtype


class ParamFactory:
    """Creates named trainable tensors; each name draws from its own RNG stream.

    Seeding by name keeps a parameter's initial value independent of which
    other parameters exist, so changing one layer never reshuffles the rest.
    """

    def __init__(self, seed: int = 0, dtype=None):
        self.seed = seed
        self.dtype = np.dtype(dtype or default_dtype())

    def _rng(self, name: str) -> np.random.Generator:
        return np.random.default_rng([self.seed, zlib.crc32(name.encode())])

    def normal(self, name: str, shape: tuple, std: float) -> Tensor:
        data = (self._rng(name).standard_normal(shape) * std).astype(self.dtype)
        return Tensor(data, requires_grad=True, name=name)

    def linear(self, name: str, fan_in: int, fan_out: int, gain: float = 1.0) -> Tensor:
        return self.normal(name, (fan_in, fan_out), gain / np.sqrt(fan_in))

    def zeros(self, name: str, shape: tuple) -> Tensor:
        return Tensor(np.zeros(shape, self.dtype), requires_grad=True, name=name)

    def ones(self, name: str, shape: tuple) -> Tensor:
        return Tensor(np.ones(shape, self.dtype), requires_grad=True, name=name)


class Module:
    """Walks attributes for parameters (trainable tensors) and sub-modules."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, val in vars(self).items():
            if isinstance(val, Tensor) and val.requires_grad:
                yield prefix + key, val
            elif isinstance(val, Module):
                yield from val.named_parameters(prefix + key + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{key}.{i}.")

    def parameters(self) -> dict[str, Tensor]:
        return dict(self.named_parameters())

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.grad = None

    def astype(self, dtype) -> "Module":
        for p in self.parameters().values():
            p.data = p.data.astype(dtype)
            p.grad = None
        return self

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters().values())
