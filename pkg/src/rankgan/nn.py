"""Multilayer perceptrons, the variational encoder and the Adam optimizer."""

from __future__ import annotations

import hashlib
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from . import autodiff as ad
from .autodiff import Node


class ConfigError(ValueError):
    pass


class FrozenParamsError(RuntimeError):
    pass


HIDDEN_ACTIVATIONS = ("leaky_relu", "tanh")
OUTPUT_ACTIVATIONS = ("identity", "tanh", "sigmoid")


@dataclass(frozen=True)
class MlpSpec:
    widths: tuple[int, ...]
    hidden: str = "leaky_relu"
    output: str = "identity"
    slope: float = 0.2

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if len(self.widths) < 2 or any(w <= 0 for w in self.widths):
            raise ConfigError(f"MlpSpec needs >= 2 positive widths, got {self.widths}")
        if self.hidden not in HIDDEN_ACTIVATIONS:
            raise ConfigError(f"unknown hidden activation {self.hidden!r}")
        if self.output not in OUTPUT_ACTIVATIONS:
            raise ConfigError(f"unknown output activation {self.output!r}")
        if not 0 < self.slope < 1:
            raise ConfigError(f"leaky slope must lie in (0, 1), got {self.slope}")

    @property
    def in_dim(self) -> int:
        return self.widths[0]

    @property
    def out_dim(self) -> int:
        return self.widths[-1]

    def to_dict(self) -> dict:
        return {"widths": list(self.widths), "hidden": self.hidden,
                "output": self.output, "slope": self.slope}

    @classmethod
    def from_dict(cls, d: Mapping) -> "MlpSpec":
        return cls(tuple(d["widths"]), d["hidden"], d["output"], float(d["slope"]))


class ModelParams:
    """Ordered, named parameter arrays with an enforced freeze flag."""

    def __init__(self, items=(), frozen: bool = False):
        self._values: OrderedDict[str, np.ndarray] = OrderedDict()
        for name, value in items:
            if name in self._values:
                raise ConfigError(f"duplicate parameter name {name!r}")
            self._values[name] = np.array(value, dtype=np.float64)
        self.frozen = frozen

    def __getitem__(self, name: str) -> np.ndarray:
        return self._values[name]

    def __contains__(self, name: str) -> bool:
        return name in self._values

    def __len__(self) -> int:
        return len(self._values)

    def names(self) -> list[str]:
        return list(self._values)

    def items(self):
        return self._values.items()

    def set(self, name: str, value: np.ndarray) -> None:
        if self.frozen:
            raise FrozenParamsError(f"cannot assign {name!r}: parameters are frozen")
        if name not in self._values:
            raise KeyError(name)
        self._values[name] = np.array(value, dtype=np.float64)

    def clone(self, frozen: bool = False) -> "ModelParams":
        return ModelParams(((k, v.copy()) for k, v in self._values.items()), frozen=frozen)

    def freeze(self) -> "ModelParams":
        self.frozen = True
        return self

    def nodes(self) -> "OrderedDict[str, Node]":
        """Fresh leaf nodes for one forward pass; frozen params become constants."""
        make = ad.constant if self.frozen else ad.variable
        return OrderedDict((k, make(v)) for k, v in self._values.items())

    def digest(self) -> str:
        h = hashlib.sha256()
        for name, value in self._values.items():
            h.update(name.encode())
            h.update(str(value.shape).encode())
            h.update(np.ascontiguousarray(value, dtype="<f8").tobytes())
        return h.hexdigest()


def init_mlp(spec: MlpSpec, rng: np.random.Generator) -> ModelParams:
    """Glorot-uniform weights, zero biases."""
    items = []
    for i, (fan_in, fan_out) in enumerate(zip(spec.widths[:-1], spec.widths[1:])):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        items.append((f"W{i}", rng.uniform(-bound, bound, size=(fan_in, fan_out))))
        items.append((f"b{i}", np.zeros(fan_out)))
    return ModelParams(items)


def _as_nodes(params) -> Mapping[str, Node]:
    if isinstance(params, ModelParams):
        return OrderedDict((k, ad.constant(v)) for k, v in params.items())
    return params


def mlp_forward(params, spec: MlpSpec, x) -> Node:
    """Affine + activation per layer.

    ``params`` is either a :class:`ModelParams` (treated as constants) or a
    mapping of parameter names to nodes, e.g. from ``ModelParams.nodes()``.
    """
    p = _as_nodes(params)
    h = ad.as_node(x)
    if h.ndim != 2 or h.shape[1] != spec.in_dim:
        raise ad.ShapeError(f"mlp_forward: input shape {h.shape} does not match input width {spec.in_dim}")
    n_layers = len(spec.widths) - 1
    for i in range(n_layers):
        h = h @ p[f"W{i}"] + p[f"b{i}"]
        if i < n_layers - 1:
            h = ad.leaky_relu(h, spec.slope) if spec.hidden == "leaky_relu" else ad.tanh(h)
    if spec.output == "tanh":
        h = ad.tanh(h)
    elif spec.output == "sigmoid":
        h = ad.sigmoid(h)
    return h


@dataclass
class EncoderOutput:
    mu: Node
    logvar: Node


def encoder_forward(params, spec: MlpSpec, x) -> EncoderOutput:
    if spec.out_dim % 2:
        raise ConfigError(f"encoder output width must be even (mu | logvar), got {spec.out_dim}")
    out = mlp_forward(params, spec, x)
    half = spec.out_dim // 2
    return EncoderOutput(out[:, :half], out[:, half:])


def sample_latent(enc: EncoderOutput, noise) -> Node:
    """Reparameterized draw z = mu + exp(logvar / 2) * noise."""
    noise = ad.as_node(noise)
    if noise.shape != enc.mu.shape:
        raise ad.ShapeError(f"sample_latent: noise shape {noise.shape} != mu shape {enc.mu.shape}")
    return enc.mu + ad.exp(enc.logvar * 0.5) * noise


def vae_loss(x, reconstruction, enc: EncoderOutput, kl_weight: float = 1.0) -> Node:
    """Squared reconstruction error plus ``kl_weight`` * KL(N(mu, sigma^2) || N(0, I)).

    Both terms are summed over features / latent units per sample and then
    averaged over the batch.
    """
    x = ad.as_node(x)
    reconstruction = ad.as_node(reconstruction)
    if x.shape != reconstruction.shape:
        raise ad.ShapeError(f"vae_loss: data shape {x.shape} != reconstruction shape {reconstruction.shape}")
    sq = ad.sum_(ad.square(reconstruction - x), axis=1)
    kl = 0.5 * ad.sum_(ad.square(enc.mu) + ad.exp(enc.logvar) - enc.logvar - 1.0, axis=1)
    return ad.mean(sq) + kl_weight * ad.mean(kl)


@dataclass
class AdamState:
    lr: float
    beta1: float = 0.0
    beta2: float = 0.99
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(state: AdamState, params: ModelParams, grads: Mapping[str, np.ndarray]) -> None:
    """One bias-corrected Adam update, applied in place."""
    if params.frozen:
        raise FrozenParamsError("adam_step called on frozen parameters")
    missing = [k for k in params.names() if k not in grads]
    if missing:
        raise KeyError(f"adam_step: no gradient for {missing}")
    state.step += 1
    t = state.step
    for name, value in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != value.shape:
            raise ad.ShapeError(f"adam_step: gradient for {name} has shape {g.shape}, expected {value.shape}")
        m = state.beta1 * state.m.get(name, 0.0) + (1 - state.beta1) * g
        v = state.beta2 * state.v.get(name, 0.0) + (1 - state.beta2) * g * g
        state.m[name], state.v[name] = m, v
        m_hat = m / (1 - state.beta1**t)
        v_hat = v / (1 - state.beta2**t)
        params.set(name, value - state.lr * m_hat / (np.sqrt(v_hat) + state.eps))


def param_grads(loss: Node, nodes: Mapping[str, Node]) -> dict[str, np.ndarray]:
    gs = ad.grad(loss, list(nodes.values()))
    return {k: g.value for k, g in zip(nodes, gs)}
