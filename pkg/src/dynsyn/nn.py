"""Minimal dense network with hand-written reverse-mode gradients and Adam.

Everything is float64 and batch-first. An Mlp is a chain of affine layers
with ReLU on the hidden ones; `forward` returns the output together with the
cache `backward` needs to produce exact parameter gradients. No external ML
framework is involved, which keeps training bitwise reproducible.
"""

from __future__ import annotations

import numpy as np

__all__ = ["Mlp", "Adam", "linear_lr"]


class Mlp:
    """Affine + ReLU chain; the output layer is linear unless asked otherwise."""

    def __init__(self, sizes, rng: np.random.Generator,
                 output_activation: str = "linear"):
        sizes = tuple(int(s) for s in sizes)
        if len(sizes) < 2:
            raise ValueError("need at least input and output sizes")
        if output_activation not in ("linear", "relu"):
            raise ValueError("output_activation must be 'linear' or 'relu'")
        self.sizes = sizes
        self.output_activation = output_activation
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = np.sqrt(1.0 / fan_in)
            self.weights.append(rng.uniform(-bound, bound, (fan_in, fan_out)))
            self.biases.append(rng.uniform(-bound, bound, fan_out))

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def parameters(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def forward(self, x: np.ndarray):
        """Batched forward pass; returns (y, cache) with cache[i] = layer input."""
        x = np.asarray(x, dtype=float)
        squeeze = x.ndim == 1
        if squeeze:
            x = x[None, :]
        if x.shape[1] != self.sizes[0]:
            raise ValueError(f"input size {x.shape[1]} != {self.sizes[0]}")
        cache = [x]
        h = x
        last = self.n_layers - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if i < last or self.output_activation == "relu":
                h = np.maximum(h, 0.0)
            if i < last:
                cache.append(h)
        cache.append(h)  # final output, for the output-relu mask
        return (h[0] if squeeze else h), cache

    def backward(self, cache, dy: np.ndarray):
        """Gradients for `parameters()` order plus the input gradient."""
        d = np.asarray(dy, dtype=float)
        if d.ndim == 1:
            d = d[None, :]
        if self.output_activation == "relu":
            d = d * (cache[-1] > 0.0)
        grads = [None] * (2 * self.n_layers)
        for i in range(self.n_layers - 1, -1, -1):
            h_in = cache[i]
            grads[2 * i] = h_in.T @ d
            grads[2 * i + 1] = d.sum(axis=0)
            d = d @ self.weights[i].T
            if i > 0:
                d = d * (cache[i] > 0.0)
        return grads, d

    def copy(self) -> "Mlp":
        out = object.__new__(Mlp)
        out.sizes = self.sizes
        out.output_activation = self.output_activation
        out.weights = [w.copy() for w in self.weights]
        out.biases = [b.copy() for b in self.biases]
        return out

    def load_from(self, other: "Mlp") -> None:
        for dst, src in zip(self.parameters(), other.parameters()):
            dst[...] = src


def linear_lr(lr0: float, step: int, total_steps: int) -> float:
    """Linear decay from lr0 to exactly zero at step == total_steps."""
    if total_steps <= 0:
        return lr0
    return lr0 * max(0.0, 1.0 - step / total_steps)


class Adam:
    """Textbook Adam with bias correction over a fixed list of parameters."""

    def __init__(self, params, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = [np.zeros_like(p) for p in self.params]
        self.v = [np.zeros_like(p) for p in self.params]
        self.t = 0

    def step(self, grads, lr: float | None = None) -> None:
        """One in-place update; `lr` overrides the stored rate (scheduling)."""
        if len(grads) != len(self.params):
            raise ValueError("gradient list does not match parameters")
        rate = self.lr if lr is None else lr
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            if g.shape != p.shape:
                raise ValueError("gradient shape mismatch")
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= rate * (m / b1c) / (np.sqrt(v / b2c) + self.eps)
