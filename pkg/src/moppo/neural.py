"""Small dense networks with hand-written reverse-mode gradients.

Parameters live in one flat float64 vector.  Layer ``i`` owns a weight
block of ``in_i * out_i`` entries stored row-major as an ``(in_i, out_i)``
matrix, followed by its ``out_i`` biases; layers are laid out in order.
Hidden layers use tanh, the output layer is linear unless
``tanh_output`` is set.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class DimensionMismatch(ValueError):
    pass


class StaleCache(ValueError):
    pass


def param_count(widths) -> int:
    return sum(a * b + b for a, b in zip(widths[:-1], widths[1:]))


@dataclass
class DenseNet:
    widths: list[int]
    params: np.ndarray
    tanh_output: bool = False

    def __post_init__(self):
        self.widths = [int(w) for w in self.widths]
        if len(self.widths) < 2:
            raise ValueError("a network needs at least input and output widths")
        self.params = np.asarray(self.params, dtype=float)
        if self.params.shape != (param_count(self.widths),):
            raise DimensionMismatch(
                f"expected {param_count(self.widths)} parameters, got {self.params.shape}")

    @classmethod
    def init(cls, widths, rng: np.random.Generator, gains=None,
             tanh_output: bool = False) -> "DenseNet":
        """Uniform Glorot initialisation, zero biases.

        ``gains`` optionally scales each layer's bound (one entry per layer).
        """
        widths = list(widths)
        n_layers = len(widths) - 1
        gains = [1.0] * n_layers if gains is None else list(gains)
        chunks = []
        for (a, b), g in zip(zip(widths[:-1], widths[1:]), gains):
            bound = g * np.sqrt(6.0 / (a + b))
            chunks.append(rng.uniform(-bound, bound, size=a * b))
            chunks.append(np.zeros(b))
        return cls(widths, np.concatenate(chunks), tanh_output=tanh_output)

    @classmethod
    def zeros(cls, widths, tanh_output: bool = False) -> "DenseNet":
        return cls(list(widths), np.zeros(param_count(widths)), tanh_output=tanh_output)

    @property
    def n_layers(self) -> int:
        return len(self.widths) - 1

    def layers(self, params=None):
        """Views ``(W, b)`` into the flat parameter vector, one per layer."""
        p = self.params if params is None else params
        out = []
        off = 0
        for a, b in zip(self.widths[:-1], self.widths[1:]):
            W = p[off:off + a * b].reshape(a, b)
            off += a * b
            out.append((W, p[off:off + b]))
            off += b
        return out

    def _activated(self, i: int) -> bool:
        return i < self.n_layers - 1 or self.tanh_output

    def forward(self, x):
        """Evaluate the network on a vector or a batch of row vectors.

        Returns ``(output, cache)``; the cache holds layer inputs and
        post-activations needed by :meth:`backward`.
        """
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        X = x[None, :] if single else x
        if X.shape[1] != self.widths[0]:
            raise DimensionMismatch(f"input width {X.shape[1]} != {self.widths[0]}")
        inputs, outs = [], []
        h = X
        for i, (W, b) in enumerate(self.layers()):
            inputs.append(h)
            z = h @ W + b
            h = np.tanh(z) if self._activated(i) else z
            outs.append(h)
        cache = {"inputs": inputs, "outs": outs, "single": single,
                 "widths": tuple(self.widths)}
        return (h[0] if single else h), cache

    def __call__(self, x):
        return self.forward(x)[0]

    def backward(self, cache, output_grad):
        """Gradient of a scalar loss w.r.t. parameters and network input.

        ``output_grad`` is dLoss/dOutput with the shape of the forward
        output.  Returns ``(param_grad, input_grad)``; parameters are not
        touched.
        """
        if cache["widths"] != tuple(self.widths):
            raise StaleCache("cache was produced by a network of different shape")
        g = np.asarray(output_grad, dtype=float)
        if cache["single"]:
            g = g[None, :]
        if g.shape != cache["outs"][-1].shape:
            raise StaleCache(f"output grad shape {g.shape} does not match cache")
        grads = []
        layers = self.layers()
        for i in range(self.n_layers - 1, -1, -1):
            W, _ = layers[i]
            if self._activated(i):
                g = g * (1.0 - cache["outs"][i] ** 2)
            grads.append((g.sum(axis=0), (cache["inputs"][i].T @ g).ravel()))
            g = g @ W.T
        flat = []
        for gb, gW in reversed(grads):
            flat.append(gW)
            flat.append(gb)
        gin = g[0] if cache["single"] else g
        return np.concatenate(flat), gin


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def like(cls, params) -> "AdamState":
        return cls(np.zeros_like(params), np.zeros_like(params), 0)


def adam_step(params, grads, state: AdamState, lr: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> np.ndarray:
    """One Adam update; ``state`` is advanced in place, new params returned."""
    state.t += 1
    state.m = beta1 * state.m + (1 - beta1) * grads
    state.v = beta2 * state.v + (1 - beta2) * grads * grads
    m_hat = state.m / (1 - beta1 ** state.t)
    v_hat = state.v / (1 - beta2 ** state.t)
    return params - lr * m_hat / (np.sqrt(v_hat) + eps)


def format_params(params) -> str:
    # repr of a Python float is the shortest string that round-trips exactly
    return "\n".join(repr(float(x)) for x in params)


def parse_params(text: str) -> np.ndarray:
    return np.array([float(x) for x in text.split()], dtype=float)


@dataclass
class Checkpoint:
    """Text checkpoint: ``key=value`` header lines, a ``---`` line, then one parameter per line."""

    header: dict = field(default_factory=dict)
    params: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def dumps(self) -> str:
        head = "\n".join(f"{k}={v}" for k, v in self.header.items())
        return f"{head}\n---\n{format_params(self.params)}\n"

    @classmethod
    def loads(cls, text: str) -> "Checkpoint":
        head, _, body = text.partition("\n---\n")
        header = {}
        for line in head.splitlines():
            if line.strip():
                k, _, v = line.partition("=")
                header[k.strip()] = v.strip()
        return cls(header, parse_params(body))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.dumps())

    @classmethod
    def load(cls, path) -> "Checkpoint":
        with open(path) as fh:
            return cls.loads(fh.read())
