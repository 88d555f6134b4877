"""Two-hidden-layer perceptron with hand-written backpropagation, and Adam."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

PARAM_NAMES = ("w1", "b1", "w2", "b2", "w3", "b3")

ACTIVATIONS = {
    "relu": (lambda z: np.maximum(z, 0.0), lambda z, a: (z > 0.0).astype(z.dtype)),
    "tanh": (np.tanh, lambda z, a: 1.0 - a * a),
}


@dataclass
class Mlp2:
    """``in -> W -> W -> out``; hidden layers use ``activation``, the output is linear.

    Weight matrices are stored ``(fan_out, fan_in)`` and act on row batches
    as ``x @ w.T + b``.
    """

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w3: np.ndarray
    b3: np.ndarray
    activation: str = "relu"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @classmethod
    def init(cls, n_in: int, n_out: int, width: int = 64, seed: int = 0, activation: str = "relu") -> "Mlp2":
        """Uniform ``(-1/sqrt(fan_in), 1/sqrt(fan_in))`` weights and biases."""
        rng = np.random.default_rng(seed)

        def layer(fan_in, fan_out):
            bound = 1.0 / math.sqrt(fan_in)
            return rng.uniform(-bound, bound, (fan_out, fan_in)), rng.uniform(-bound, bound, fan_out)

        w1, b1 = layer(n_in, width)
        w2, b2 = layer(width, width)
        w3, b3 = layer(width, n_out)
        return cls(w1, b1, w2, b2, w3, b3, activation)

    @property
    def n_in(self) -> int:
        return self.w1.shape[1]

    @property
    def n_out(self) -> int:
        return self.w3.shape[0]

    @property
    def width(self) -> int:
        return self.w1.shape[0]

    def params(self) -> dict:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def copy(self) -> "Mlp2":
        return Mlp2(*(getattr(self, n).copy() for n in PARAM_NAMES), activation=self.activation)

    def forward(self, x: np.ndarray):
        """Outputs for a batch ``x`` of shape ``(N, n_in)`` plus the cache needed by :meth:`backward`."""
        act, _ = ACTIVATIONS[self.activation]
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        z1 = x @ self.w1.T + self.b1
        a1 = act(z1)
        z2 = a1 @ self.w2.T + self.b2
        a2 = act(z2)
        y = a2 @ self.w3.T + self.b3
        return y, (x, z1, a1, z2, a2)

    def backward(self, cache, dy: np.ndarray) -> dict:
        """Parameter gradients given ``dL/dy`` for the cached batch (summed over the batch)."""
        _, dact = ACTIVATIONS[self.activation]
        x, z1, a1, z2, a2 = cache
        dy = np.atleast_2d(dy)
        g = {"w3": dy.T @ a2, "b3": dy.sum(axis=0)}
        d2 = (dy @ self.w3) * dact(z2, a2)
        g["w2"], g["b2"] = d2.T @ a1, d2.sum(axis=0)
        d1 = (d2 @ self.w2) * dact(z1, a1)
        g["w1"], g["b1"] = d1.T @ x, d1.sum(axis=0)
        return g

    def arrays(self, prefix: str) -> dict:
        return {f"{prefix}.{n}": getattr(self, n) for n in PARAM_NAMES}

    @classmethod
    def from_arrays(cls, arrays: dict, prefix: str, activation: str = "relu") -> "Mlp2":
        return cls(*(np.array(arrays[f"{prefix}.{n}"]) for n in PARAM_NAMES), activation=activation)


def mlp_forward(net: Mlp2, x: np.ndarray) -> np.ndarray:
    return net.forward(x)[0]


def mlp_gradients(net: Mlp2, x: np.ndarray, dy: np.ndarray) -> dict:
    return net.backward(net.forward(x)[1], dy)


def cosine_lr(lr0: float, epoch: int, epochs: int) -> float:
    """Cosine annealing from ``lr0`` at epoch 0 toward zero at ``epochs``."""
    if epochs <= 0:
        return lr0
    return 0.5 * lr0 * (1.0 + math.cos(math.pi * epoch / epochs))


@dataclass
class Adam:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def update(self, net: Mlp2, grads: dict, lr: float) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name in PARAM_NAMES:
            g = grads[name]
            m = self.m.get(name)
            if m is None:
                m = self.m[name] = np.zeros_like(g)
                self.v[name] = np.zeros_like(g)
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p = getattr(net, name)
            p -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
