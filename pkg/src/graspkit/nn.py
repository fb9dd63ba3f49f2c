"""Small building blocks (linear layers, MLPs) on top of the tensor engine."""

from __future__ import annotations

import numpy as np

from .engine import Tensor, concat


class Linear:
    """Affine map x @ W + b with Glorot-uniform init."""

    def __init__(self, n_in, n_out, rng, zero=False):
        if zero:
            w = np.zeros((n_in, n_out))
        else:
            bound = np.sqrt(6.0 / (n_in + n_out))
            w = rng.uniform(-bound, bound, size=(n_in, n_out))
        self.w = Tensor(w, requires_grad=True)
        self.b = Tensor(np.zeros(n_out), requires_grad=True)

    def __call__(self, x):
        return x @ self.w + self.b

    def params(self):
        return [self.w, self.b]


class MLP:
    """Stack of Linear layers with ReLU between (none after the last)."""

    def __init__(self, sizes, rng):
        self.layers = [Linear(a, b, rng) for a, b in zip(sizes[:-1], sizes[1:])]

    def __call__(self, x):
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = x.relu()
        return x

    def params(self):
        return [p for layer in self.layers for p in layer.params()]


def mse(a, b):
    d = a - b
    return (d * d).mean()


def log_softmax(logits):
    """Numerically-stable log-softmax over the last axis."""
    shift = Tensor(logits.data.max(axis=-1, keepdims=True))  # detached constant
    z = logits - shift
    lse = z.exp().sum(axis=-1, keepdims=True).log()
    return z - lse


def cross_entropy(logits, labels):
    """Mean negative log-likelihood of integer ``labels``."""
    lp = log_softmax(logits)
    labels = np.asarray(labels, dtype=np.intp)
    rows = np.arange(len(labels))
    picked = lp[rows, labels]
    return -picked.mean()


def collect_params(*modules):
    out = []
    for m in modules:
        out.extend(m.params())
    return out


def params_to_dict(prefix, params):
    return {f"{prefix}.{i}": p.data for i, p in enumerate(params)}


def load_params_from_dict(prefix, params, blob):
    for i, p in enumerate(params):
        key = f"{prefix}.{i}"
        if key not in blob:
            raise KeyError(f"checkpoint missing tensor '{key}'")
        if blob[key].shape != p.data.shape:
            raise ValueError(f"shape mismatch for '{key}'")
        p.data[...] = blob[key]
