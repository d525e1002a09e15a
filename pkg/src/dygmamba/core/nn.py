"""Small layer containers: parameter registry, Linear and LayerNorm."""
from __future__ import annotations

from typing import Iterator

import numpy as np

from ..errors import ContractError, DimensionError
from . import ops
from .tensor import Parameter, get_dtype

LINEAR_INIT = "uniform(-1/sqrt(fan_in), 1/sqrt(fan_in))"


class Module:
    """Parameters and sub-modules are discovered from attributes in assignment order."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for key, value in vars(self).items():
            if key.startswith("_"):
                continue
            name = f"{prefix}{key}"
            if isinstance(value, Parameter):
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")
                    elif isinstance(item, Parameter):
                        yield f"{name}.{i}", item

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        extra = sorted(set(state) - set(own))
        if missing or extra:
            raise ContractError(f"state mismatch: missing={missing} unexpected={extra}")
        for name, p in own.items():
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise DimensionError(f"{name}: stored shape {arr.shape} != {p.shape}")
            p.data = np.ascontiguousarray(arr, dtype=p.dtype)
            p.zero_grad()

    def parameter_count(self) -> int:
        return sum(p.size for p in self.parameters())


def uniform_init(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / np.sqrt(max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape).astype(get_dtype())


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True):
        self.W = Parameter(uniform_init(rng, d_in, (d_in, d_out)), name="W")
        self.b = Parameter(uniform_init(rng, d_in, (d_out,)), name="b") if bias else None

    @property
    def d_in(self) -> int:
        return self.W.shape[0]

    @property
    def d_out(self) -> int:
        return self.W.shape[1]

    def __call__(self, x):
        return ops.apply_linear(x, self.W, self.b)


class LayerNorm(Module):
    def __init__(self, d: int, eps: float = 1e-5):
        self.gain = Parameter(np.ones(d, dtype=get_dtype()), name="gain")
        self.bias = Parameter(np.zeros(d, dtype=get_dtype()), name="bias")
        self._eps = eps

    def __call__(self, x):
        return ops.layer_normalize(x, self.gain, self.bias, self._eps)
