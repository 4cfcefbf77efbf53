"""Multilayer feed-forward generators with exact analytic Jacobians.

A generator maps a low-dimensional code z in R^k to a signal in R^n through
d dense layers sharing one element-wise activation (identity, ReLU, or leaky
ReLU). Weights and biases are stored explicitly as dense float64 arrays so
linear-algebra facts about the composite map can be checked directly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from ._common import as_vector

IDENTITY = "identity"
RELU = "relu"
LEAKY_RELU = "leaky_relu"
ACTIVATION_KINDS = (IDENTITY, RELU, LEAKY_RELU)


@dataclass(frozen=True)
class Activation:
    """Element-wise activation; `h` is the negative-side slope of leaky ReLU."""

    kind: str
    h: float = 1.0

    def __post_init__(self):
        if self.kind not in ACTIVATION_KINDS:
            raise ValueError(f"unknown activation kind {self.kind!r}")
        if self.kind == LEAKY_RELU and not 0.0 < self.h <= 1.0:
            raise ValueError(f"leaky ReLU slope must be in (0, 1], got {self.h}")

    def apply(self, x: np.ndarray) -> np.ndarray:
        if self.kind == IDENTITY:
            return x
        if self.kind == RELU:
            return np.maximum(x, 0.0)
        return np.where(x >= 0.0, x, self.h * x)

    def deriv(self, x: np.ndarray) -> np.ndarray:
        # The kink at exactly 0 takes the value of the ">= 0" branch.
        if self.kind == IDENTITY:
            return np.ones_like(x)
        if self.kind == RELU:
            return np.where(x >= 0.0, 1.0, 0.0)
        return np.where(x >= 0.0, 1.0, self.h)

    def to_dict(self) -> dict:
        if self.kind == LEAKY_RELU:
            return {"kind": self.kind, "h": self.h}
        return {"kind": self.kind}

    @classmethod
    def from_dict(cls, d: dict) -> "Activation":
        return cls(kind=d["kind"], h=float(d.get("h", 1.0)))


@dataclass(frozen=True)
class GeneratorNetwork:
    """Immutable d-layer generator.

    dims = [k, n_1, ..., n_d = n]; weights[i] has shape dims[i+1] x dims[i]
    and biases[i] has length dims[i+1]. Arrays are made read-only at
    construction, so a network can be shared across workers safely.
    """

    dims: tuple[int, ...]
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    activation: Activation
    seed: int = 0

    def __post_init__(self):
        dims = tuple(int(w) for w in self.dims)
        if len(dims) < 2:
            raise ValueError("need at least one layer: dims = [k, ..., n]")
        if any(w < 1 for w in dims):
            raise ValueError(f"layer widths must be >= 1, got {dims}")
        weights = tuple(np.ascontiguousarray(w, dtype=np.float64) for w in self.weights)
        biases = tuple(np.ascontiguousarray(b, dtype=np.float64) for b in self.biases)
        if len(weights) != len(dims) - 1 or len(biases) != len(dims) - 1:
            raise ValueError("need one weight matrix and one bias vector per layer")
        for i, (w, b) in enumerate(zip(weights, biases)):
            want = (dims[i + 1], dims[i])
            if w.shape != want:
                raise ValueError(f"weights[{i}] has shape {w.shape}, expected {want}")
            if b.shape != (dims[i + 1],):
                raise ValueError(f"biases[{i}] has length {b.shape}, expected {dims[i + 1]}")
        for arr in weights + biases:
            arr.setflags(write=False)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "biases", biases)
        object.__setattr__(self, "seed", int(self.seed))

    @property
    def k(self) -> int:
        return self.dims[0]

    @property
    def n(self) -> int:
        return self.dims[-1]

    @property
    def depth(self) -> int:
        return len(self.dims) - 1


def random_gaussian_net(dims, activation: Activation, seed: int) -> GeneratorNetwork:
    """Network with all weight and bias entries i.i.d. standard normal.

    Identical (dims, activation, seed) always produce bitwise-equal networks.
    """
    dims = tuple(int(w) for w in dims)
    if len(dims) < 2 or any(w < 1 for w in dims):
        raise ValueError(f"invalid dims {dims}")
    rng = np.random.default_rng(int(seed))
    weights, biases = [], []
    for i in range(len(dims) - 1):
        weights.append(rng.standard_normal((dims[i + 1], dims[i])))
        biases.append(rng.standard_normal(dims[i + 1]))
    return GeneratorNetwork(dims, tuple(weights), tuple(biases), activation, int(seed))


def zero_bias(net: GeneratorNetwork) -> GeneratorNetwork:
    """Copy of `net` with every bias vector set to zero."""
    biases = tuple(np.zeros(w.shape[0]) for w in net.weights)
    return GeneratorNetwork(net.dims, net.weights, biases, net.activation, net.seed)


def forward(net: GeneratorNetwork, z) -> np.ndarray:
    """Evaluate G(z) = sigma(H_d sigma(... sigma(H_1 z + b_1) ...) + b_d)."""
    a = as_vector(z, net.k, "z")
    for w, b in zip(net.weights, net.biases):
        a = net.activation.apply(w @ a + b)
    return a


def layer_preactivations(net: GeneratorNetwork, z) -> list[np.ndarray]:
    """Pre-activation vectors H_i a_{i-1} + b_i for each layer, in order."""
    a = as_vector(z, net.k, "z")
    pres = []
    for w, b in zip(net.weights, net.biases):
        pre = w @ a + b
        pres.append(pre)
        a = net.activation.apply(pre)
    return pres


def jacobian(net: GeneratorNetwork, z) -> np.ndarray:
    """Exact n x k Jacobian of G at z: D_d H_d ... D_1 H_1.

    D_i is the diagonal of activation derivatives at the i-th layer
    pre-activation, with the value at a kink taken from the ">= 0" branch.
    """
    a = as_vector(z, net.k, "z")
    jac = np.eye(net.k)
    for w, b in zip(net.weights, net.biases):
        pre = w @ a + b
        jac = net.activation.deriv(pre)[:, None] * (w @ jac)
        a = net.activation.apply(pre)
    return jac


def compose_linear(net: GeneratorNetwork) -> np.ndarray:
    """Composite weight matrix W = H_d ... H_1 of an identity-activation net.

    For every z, forward(net, z) = W z + forward(net, 0).
    """
    if net.activation.kind != IDENTITY:
        raise ValueError("compose_linear requires identity activation")
    w = net.weights[0]
    for h in net.weights[1:]:
        w = h @ w
    return w


def net_to_dict(net: GeneratorNetwork) -> dict:
    return {
        "dims": list(net.dims),
        "activation": net.activation.to_dict(),
        "weights": [w.tolist() for w in net.weights],
        "biases": [b.tolist() for b in net.biases],
        "seed": net.seed,
    }


def net_from_dict(d: dict) -> GeneratorNetwork:
    return GeneratorNetwork(
        dims=tuple(d["dims"]),
        weights=tuple(np.asarray(w, dtype=np.float64) for w in d["weights"]),
        biases=tuple(np.asarray(b, dtype=np.float64) for b in d["biases"]),
        activation=Activation.from_dict(d["activation"]),
        seed=int(d.get("seed", 0)),
    )


def save_net(net: GeneratorNetwork, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(net_to_dict(net), fh)


def load_net(path) -> GeneratorNetwork:
    with open(path, "r", encoding="utf-8") as fh:
        return net_from_dict(json.load(fh))
