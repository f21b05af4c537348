"""Multilayer perceptrons: specs, Glorot initialization, forward, counting."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import DimensionError, GradientTape, Tensor

_ACTIVATIONS = {"tanh": T.tanh, "relu": T.relu}


@dataclass(frozen=True)
class MlpSpec:
    """Layer sizes of one MLP. Zero hidden layers give a plain affine map.

    The activation follows every hidden layer and never the output layer.
    """

    in_dim: int
    hidden: tuple[int, ...]
    out_dim: int
    activation: str = "tanh"

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.in_dim < 1 or self.out_dim < 1 or any(h < 1 for h in self.hidden):
            raise ValueError(f"all layer widths must be positive: {self}")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def layer_dims(self) -> list[tuple[int, int]]:
        dims = [self.in_dim, *self.hidden, self.out_dim]
        return [(dims[i + 1], dims[i]) for i in range(len(dims) - 1)]


@dataclass
class MlpParams:
    spec: MlpSpec
    layers: list[tuple[Tensor, Tensor]] = field(default_factory=list)

    def tensors(self, prefix: str = "mlp"):
        for i, (w, b) in enumerate(self.layers):
            yield f"{prefix}.w{i}", w
            yield f"{prefix}.b{i}", b


def init_mlp(spec: MlpSpec, rng: np.random.Generator) -> MlpParams:
    """Glorot-uniform weights, zero biases; deterministic for a seeded rng."""
    layers = []
    for out_dim, in_dim in spec.layer_dims:
        a = np.sqrt(6.0 / (in_dim + out_dim))
        w = rng.uniform(-a, a, size=(out_dim, in_dim))
        layers.append((Tensor(w), Tensor(np.zeros(out_dim))))
    return MlpParams(spec=spec, layers=layers)


def forward(params: MlpParams, x: Tensor) -> Tensor:
    """Evaluate the MLP on a (batch, in_dim) tensor."""
    if x.array.ndim != 2 or x.shape[1] != params.spec.in_dim:
        raise DimensionError(
            f"input shape {x.shape} incompatible with in_dim {params.spec.in_dim}"
        )
    act = params.spec.activation
    h = x
    last = len(params.layers) - 1
    for i, (w, b) in enumerate(params.layers):
        h = T.affine(h, w, b, activation=act if i != last else None)
    return h


def count_params(params: MlpParams) -> int:
    return sum(w.size + b.size for w, b in params.layers)


def watch(tape: GradientTape, params: MlpParams) -> None:
    for _, t in params.tensors():
        tape.watch(t)
