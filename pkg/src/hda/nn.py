"""Layers, initialization, MLP composition and SGD with momentum."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .kernels import sgd_momentum_update

ACTIVATIONS = {"tanh": ad.tanh, "relu": ad.relu}


@dataclass(frozen=True)
class InitSpec:
    """Weight initializer: ``gaussian`` with standard deviation ``std``, or ``zeros``."""

    kind: str = "gaussian"
    std: float = 0.0

    def __post_init__(self):
        if self.kind not in ("gaussian", "zeros"):
            raise ValueError(f"unknown init kind {self.kind!r}")
        if self.std < 0:
            raise ValueError(f"init std must be nonnegative, got {self.std}")

    @classmethod
    def gaussian(cls, std: float) -> "InitSpec":
        return cls("gaussian", float(std))

    @classmethod
    def zeros(cls) -> "InitSpec":
        return cls("zeros", 0.0)

    def draw(self, rng: np.random.Generator, shape) -> np.ndarray:
        if self.kind == "zeros":
            return np.zeros(shape)
        return rng.normal(0.0, 1.0, size=shape) * self.std


@dataclass
class Mlp:
    """Stack of affine layers; ``activation`` between layers, identity at the end.

    ``output_activation`` optionally applies an activation to the final layer
    too (used for the shared encoder trunk).
    """

    layers: list  # [(W, b), ...]
    activation: str = "tanh"
    output_activation: Optional[str] = None

    @property
    def dims(self) -> list:
        return [self.layers[0][0].shape[0]] + [w.shape[1] for w, _ in self.layers]

    def parameters(self) -> list:
        return [t for layer in self.layers for t in layer]

    def __call__(self, x: Tensor) -> Tensor:
        return forward_mlp(self, x)


def init_mlp(
    dims: Sequence[int],
    hidden_init: InitSpec,
    final_init: InitSpec,
    seed,
    activation: str = "tanh",
    output_activation: Optional[str] = None,
) -> Mlp:
    """Build an MLP whose final weight matrix is drawn from ``final_init``.

    All earlier weight matrices use ``hidden_init``; biases start at zero.
    ``seed`` may be an int, a ``SeedSequence`` or a ``Generator``.
    """
    dims = [int(d) for d in dims]
    if len(dims) < 2:
        raise ValueError(f"init_mlp: need at least input and output dims, got {dims}")
    if any(d <= 0 for d in dims):
        raise ValueError(f"init_mlp: dims must be positive, got {dims}")
    for name in (activation, output_activation):
        if name is not None and name not in ACTIVATIONS:
            raise ValueError(f"unknown activation {name!r}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    layers = []
    n_layers = len(dims) - 1
    for i in range(n_layers):
        spec = final_init if i == n_layers - 1 else hidden_init
        w = Tensor(spec.draw(rng, (dims[i], dims[i + 1])), requires_grad=True)
        b = Tensor(np.zeros(dims[i + 1]), requires_grad=True)
        layers.append((w, b))
    return Mlp(layers, activation=activation, output_activation=output_activation)


def forward_mlp(m: Mlp, x: Tensor) -> Tensor:
    x = x if isinstance(x, Tensor) else Tensor(x)
    if x.data.ndim != 2 or x.shape[1] != m.layers[0][0].shape[0]:
        raise ad.ShapeError(
            f"forward_mlp: input shape {x.shape} does not match input dim {m.layers[0][0].shape[0]}"
        )
    act = ACTIVATIONS[m.activation]
    h = x
    last = len(m.layers) - 1
    for i, (w, b) in enumerate(m.layers):
        h = ad.add_bias(ad.matmul(h, w), b)
        if i < last:
            h = act(h)
    if m.output_activation is not None:
        h = ACTIVATIONS[m.output_activation](h)
    return h


def xavier_std(fan_in: int) -> float:
    return 1.0 / math.sqrt(fan_in)


@dataclass
class SgdState:
    """Per-parameter velocity buffers plus the optimizer constants."""

    lr: float
    momentum: float = 0.9
    weight_decay: float = 0.0005
    velocity: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError(f"learning rate must be positive, got {self.lr}")


class MissingGradientError(RuntimeError):
    pass


def sgd_step(params: Sequence[Tensor], state: SgdState, grads: Optional[Sequence] = None) -> None:
    """One momentum-SGD update, in place.

    ``v <- momentum * v + g + weight_decay * w`` then ``w <- w - lr * v``.
    Gradients default to each parameter's ``.grad``.
    """
    if grads is None:
        grads = [p.grad for p in params]
    if len(grads) != len(params):
        raise ValueError(f"sgd_step: {len(grads)} gradients for {len(params)} parameters")
    # validate everything first so a failure leaves no parameter half-updated
    for p, g in zip(params, grads):
        if g is None:
            raise MissingGradientError(f"sgd_step: parameter of shape {p.shape} has no gradient")
    for p, g in zip(params, grads):
        v = state.velocity.get(id(p))
        if v is None:
            v = np.zeros_like(p.data)
            state.velocity[id(p)] = v
        sgd_momentum_update(p.data, np.asarray(g, dtype=np.float64), v,
                            state.lr, state.momentum, state.weight_decay)


def lambda_schedule(progress: float, gamma: float = 10.0) -> float:
    """Progressive adversarial weight ``2 / (1 + exp(-gamma * p)) - 1``."""
    if not 0.0 <= progress <= 1.0:
        raise ValueError(f"lambda_schedule: progress must be in [0, 1], got {progress}")
    if gamma <= 0:
        raise ValueError(f"lambda_schedule: gamma must be positive, got {gamma}")
    return 2.0 / (1.0 + math.exp(-gamma * progress)) - 1.0
