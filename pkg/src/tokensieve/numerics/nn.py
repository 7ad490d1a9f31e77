"""Parameters, MLPs, and layer normalization on top of the tensor core."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import (
    Tensor,
    add,
    gelu,
    matmul,
    power,
    relu,
    sigmoid,
    tensor_mean,
)

LAYER_NORM_EPS = 1e-5


def make_rng(seed: int) -> np.random.Generator:
    """Seeded generator used for every initialization in the package.

    SFC64 keeps the state small and the stream identical across platforms.
    """
    return np.random.Generator(np.random.SFC64(seed))


class Parameter:
    """A named trainable tensor with a persistent same-shape gradient buffer.

    Gradients accumulate across ``backward`` sweeps until ``zero_grad``;
    the optimizer step is ``data -= lr * gradient`` followed by zeroing.
    """

    def __init__(self, data, name: str):
        self.tensor = Tensor(data, requires_grad=True)
        self.tensor.grad = np.zeros_like(self.tensor.data)
        self.name = name

    @property
    def data(self) -> np.ndarray:
        return self.tensor.data

    @property
    def gradient(self) -> np.ndarray:
        return self.tensor.grad

    @property
    def shape(self) -> tuple:
        return self.tensor.shape

    def zero_grad(self) -> None:
        self.tensor.grad = np.zeros_like(self.tensor.data)

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


@dataclass(frozen=True)
class MlpSpec:
    """Layer widths plus activation choices for a stack of linear layers."""

    widths: tuple[int, ...]
    activation: str = "relu"
    final_activation: str = "none"

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if len(self.widths) < 2:
            raise ValueError("MlpSpec needs at least input and output widths")
        if any(w <= 0 for w in self.widths):
            raise ValueError(f"widths must be positive, got {self.widths}")
        if self.activation not in ("relu", "gelu"):
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.final_activation not in ("none", "sigmoid"):
            raise ValueError(f"unknown final activation {self.final_activation!r}")

    @property
    def num_layers(self) -> int:
        return len(self.widths) - 1


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def init_mlp_params(spec: MlpSpec, rng: np.random.Generator, prefix: str) -> list[Parameter]:
    """Weight/bias parameter list for ``mlp_forward``: [W0, b0, W1, b1, ...]."""
    params: list[Parameter] = []
    for i in range(spec.num_layers):
        fan_in, fan_out = spec.widths[i], spec.widths[i + 1]
        params.append(Parameter(glorot_uniform(rng, fan_in, fan_out), f"{prefix}.w{i}"))
        params.append(Parameter(np.zeros(fan_out), f"{prefix}.b{i}"))
    return params


def linear_forward(inputs: Tensor, weights: Parameter, bias: Parameter) -> Tensor:
    """Affine map rows of ``inputs`` [N, Din] through [Din, Dout] + [Dout]."""
    if inputs.ndim != 2:
        raise ValueError(f"linear_forward expects 2-D input, got {inputs.shape}")
    if inputs.shape[1] != weights.shape[0] or weights.shape[1] != bias.shape[0]:
        raise ValueError(
            f"linear_forward shape mismatch: input {inputs.shape}, "
            f"weights {weights.shape}, bias {bias.shape}"
        )
    return add(matmul(inputs, weights.tensor), bias.tensor)


_ACTIVATIONS = {"relu": relu, "gelu": gelu}


def mlp_forward(inputs: Tensor, spec: MlpSpec, params: list[Parameter]) -> Tensor:
    """Run the layer stack described by ``spec`` with params from ``init_mlp_params``."""
    if len(params) != 2 * spec.num_layers:
        raise ValueError(
            f"expected {2 * spec.num_layers} parameters for {spec.num_layers} layers, "
            f"got {len(params)}"
        )
    for i in range(spec.num_layers):
        expect = (spec.widths[i], spec.widths[i + 1])
        if params[2 * i].shape != expect:
            raise ValueError(
                f"layer {i} weight shape {params[2 * i].shape} != spec {expect}"
            )
    act = _ACTIVATIONS[spec.activation]
    out = inputs
    for i in range(spec.num_layers):
        out = linear_forward(out, params[2 * i], params[2 * i + 1])
        if i < spec.num_layers - 1:
            out = act(out)
    if spec.final_activation == "sigmoid":
        out = sigmoid(out)
    return out


def layer_norm(inputs: Tensor, gain: Parameter, shift: Parameter) -> Tensor:
    """Per-row normalization to zero mean / unit variance, then affine."""
    if inputs.ndim != 2 or inputs.shape[1] != gain.shape[0]:
        raise ValueError(
            f"layer_norm shape mismatch: input {inputs.shape}, gain {gain.shape}"
        )
    if inputs.shape[1] < 2:
        raise ValueError("layer_norm needs at least 2 features per row")
    mu = tensor_mean(inputs, axis=1, keepdims=True)
    centered = inputs - mu
    var = tensor_mean(centered * centered, axis=1, keepdims=True)
    inv_std = power(var + LAYER_NORM_EPS, -0.5)
    return centered * inv_std * gain.tensor + shift.tensor


@dataclass
class SgdTrainer:
    """Plain constant-rate gradient descent over a parameter list."""

    params: list[Parameter]
    lr: float

    def step(self) -> None:
        for p in self.params:
            p.tensor.data -= self.lr * p.gradient
        self.zero_grad()

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()
