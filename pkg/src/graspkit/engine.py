"""Minimal dense-tensor engine with tape-based reverse-mode differentiation.

All arrays are float64. The graph is recorded implicitly: every op whose
inputs require grad attaches a backward closure to its output; ``backward``
topologically sorts the reachable graph and releases it afterwards.

Broadcasting is deliberately restricted: two shapes are compatible only when
they are equal, one operand is a scalar, or one shape is a trailing suffix of
the other (leading-batch broadcast). Anything else raises ``ShapeError``.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "ShapeError",
    "NumericError",
    "tensor",
    "zeros",
    "concat",
    "stack",
    "sinusoidal_embed",
    "grad_check",
    "SGD",
    "Adam",
]


class ShapeError(ValueError):
    """Operand shapes violate an op's contract."""


class NumericError(FloatingPointError):
    """A forward op produced NaN or Inf."""


def _as_array(x):
    a = np.asarray(x, dtype=np.float64)
    return a


def _check_finite(a, op):
    if not np.all(np.isfinite(a)):
        raise NumericError(f"non-finite values produced by op '{op}'")


def _check_broadcast(sa, sb):
    """Allow equal shapes, scalars, or a leading-batch broadcast."""
    if sa == sb or sa == () or sb == ():
        return
    if len(sa) == len(sb) and all(a == b or a == 1 or b == 1 for a, b in zip(sa, sb)):
        return
    short, long_ = (sa, sb) if len(sa) <= len(sb) else (sb, sa)
    if len(short) < len(long_) and long_[len(long_) - len(short):] == short:
        return
    raise ShapeError(f"incompatible shapes {sa} and {sb}")


def _unbroadcast(grad, shape):
    """Reduce a broadcast gradient back to the original operand shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    for i, n in enumerate(shape):
        if n == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad=False):
        self.data = _as_array(data)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self._op = "leaf"

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def _make(data, parents, backward, op):
        out = Tensor.__new__(Tensor)
        out.data = data
        out.requires_grad = any(p.requires_grad for p in parents)
        out.grad = None
        out._op = op
        if out.requires_grad:
            out._parents = parents
            out._backward = backward
        else:
            out._parents = ()
            out._backward = None
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data.copy())

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self._op}, grad={self.requires_grad})"

    # -- arithmetic -----------------------------------------------------------

    def __add__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other)
        _check_broadcast(self.shape, other.shape)
        out_data = self.data + other.data
        _check_finite(out_data, "add")

        def backward(g, a=self, b=other):
            if a.requires_grad:
                a._accum(_unbroadcast(g, a.shape))
            if b.requires_grad:
                b._accum(_unbroadcast(g, b.shape))

        return Tensor._make(out_data, (self, other), backward, "add")

    __radd__ = __add__

    def __neg__(self):
        def backward(g, a=self):
            a._accum(-g)

        return Tensor._make(-self.data, (self,), backward, "neg")

    def __sub__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other)
        return self + (-other)

    def __rsub__(self, other):
        return Tensor(other) + (-self)

    def __mul__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other)
        _check_broadcast(self.shape, other.shape)
        out_data = self.data * other.data
        _check_finite(out_data, "mul")

        def backward(g, a=self, b=other):
            if a.requires_grad:
                a._accum(_unbroadcast(g * b.data, a.shape))
            if b.requires_grad:
                b._accum(_unbroadcast(g * a.data, b.shape))

        return Tensor._make(out_data, (self, other), backward, "mul")

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other)
        _check_broadcast(self.shape, other.shape)
        out_data = self.data / other.data
        _check_finite(out_data, "div")

        def backward(g, a=self, b=other):
            if a.requires_grad:
                a._accum(_unbroadcast(g / b.data, a.shape))
            if b.requires_grad:
                b._accum(_unbroadcast(-g * a.data / (b.data * b.data), b.shape))

        return Tensor._make(out_data, (self, other), backward, "div")

    def __rtruediv__(self, other):
        return Tensor(other) / self

    def __pow__(self, p):
        p = float(p)
        out_data = self.data ** p
        _check_finite(out_data, "pow")

        def backward(g, a=self):
            a._accum(g * p * a.data ** (p - 1.0))

        return Tensor._make(out_data, (self,), backward, "pow")

    def __matmul__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other)
        if self.data.ndim < 1 or other.data.ndim < 1:
            raise ShapeError("matmul requires rank >= 1 operands")
        if self.shape[-1] != other.shape[-2 if other.data.ndim > 1 else 0]:
            raise ShapeError(f"matmul contraction mismatch {self.shape} @ {other.shape}")
        out_data = self.data @ other.data
        _check_finite(out_data, "matmul")

        def backward(g, a=self, b=other):
            ad, bd = a.data, b.data
            if ad.ndim == 1 and bd.ndim == 1:  # dot product
                if a.requires_grad:
                    a._accum(g * bd)
                if b.requires_grad:
                    b._accum(g * ad)
                return
            if bd.ndim == 1:  # (..., m, k) @ (k,) -> (..., m)
                if a.requires_grad:
                    a._accum(_unbroadcast(g[..., :, None] * bd, ad.shape))
                if b.requires_grad:
                    b._accum(_unbroadcast(np.einsum("...ij,...i->...j", ad, g), bd.shape))
                return
            if ad.ndim == 1:  # (k,) @ (..., k, n) -> (..., n)
                if a.requires_grad:
                    a._accum(_unbroadcast(np.einsum("...jn,...n->...j", bd, g), ad.shape))
                if b.requires_grad:
                    b._accum(_unbroadcast(ad[:, None] * g[..., None, :], bd.shape))
                return
            if a.requires_grad:
                a._accum(_unbroadcast(_as_array(g @ np.swapaxes(bd, -1, -2)), ad.shape))
            if b.requires_grad:
                b._accum(_unbroadcast(_as_array(np.swapaxes(ad, -1, -2) @ g), bd.shape))

        return Tensor._make(out_data, (self, other), backward, "matmul")

    # -- elementwise nonlinearities ------------------------------------------

    def relu(self):
        out_data = np.maximum(self.data, 0.0)

        def backward(g, a=self, mask=self.data > 0):
            a._accum(g * mask)

        return Tensor._make(out_data, (self,), backward, "relu")

    def sigmoid(self):
        out_data = 1.0 / (1.0 + np.exp(-np.clip(self.data, -500, 500)))

        def backward(g, a=self, s=out_data):
            a._accum(g * s * (1.0 - s))

        return Tensor._make(out_data, (self,), backward, "sigmoid")

    def tanh(self):
        out_data = np.tanh(self.data)

        def backward(g, a=self, t=out_data):
            a._accum(g * (1.0 - t * t))

        return Tensor._make(out_data, (self,), backward, "tanh")

    def exp(self):
        out_data = np.exp(self.data)
        _check_finite(out_data, "exp")

        def backward(g, a=self, e=out_data):
            a._accum(g * e)

        return Tensor._make(out_data, (self,), backward, "exp")

    def log(self):
        out_data = np.log(self.data)
        _check_finite(out_data, "log")

        def backward(g, a=self):
            a._accum(g / a.data)

        return Tensor._make(out_data, (self,), backward, "log")

    def sqrt(self):
        out_data = np.sqrt(self.data)
        _check_finite(out_data, "sqrt")

        def backward(g, a=self, s=out_data):
            a._accum(g * 0.5 / s)

        return Tensor._make(out_data, (self,), backward, "sqrt")

    def sin(self):
        def backward(g, a=self):
            a._accum(g * np.cos(a.data))

        return Tensor._make(np.sin(self.data), (self,), backward, "sin")

    def cos(self):
        def backward(g, a=self):
            a._accum(-g * np.sin(a.data))

        return Tensor._make(np.cos(self.data), (self,), backward, "cos")

    def clip(self, lo, hi):
        """Clamp values; gradient passes only through the interior."""
        out_data = np.clip(self.data, lo, hi)
        mask = (self.data > lo) & (self.data < hi)

        def backward(g, a=self, m=mask):
            a._accum(g * m)

        return Tensor._make(out_data, (self,), backward, "clip")

    # -- reductions & shape ---------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        out_data = self.data.sum(axis=axis, keepdims=keepdims)

        def backward(g, a=self, ax=axis, kd=keepdims):
            if ax is not None and not kd:
                g = np.expand_dims(g, ax)
            a._accum(np.broadcast_to(g, a.shape).copy())

        return Tensor._make(_as_array(out_data), (self,), backward, "sum")

    def mean(self, axis=None, keepdims=False):
        n = self.size if axis is None else self.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        out_data = self.data.reshape(shape)

        def backward(g, a=self):
            a._accum(g.reshape(a.shape))

        return Tensor._make(out_data, (self,), backward, "reshape")

    def transpose(self, *axes):
        axes = axes or None
        out_data = self.data.transpose(axes) if axes else self.data.T
        inv = np.argsort(axes) if axes else None

        def backward(g, a=self, inv=inv):
            a._accum(g.transpose(inv) if inv is not None else g.T)

        return Tensor._make(_as_array(out_data), (self,), backward, "transpose")

    def __getitem__(self, idx):
        out_data = _as_array(self.data[idx])

        def backward(g, a=self, idx=idx):
            full = np.zeros_like(a.data)
            np.add.at(full, idx, g)
            a._accum(full)

        return Tensor._make(out_data, (self,), backward, "slice")

    def gather_rows(self, idx):
        """Select rows along the first axis; scatter-adds on backward."""
        idx = np.asarray(idx, dtype=np.intp)
        return self[idx]

    def maxpool_over_points(self, axis=-2):
        """Max over the points axis. Returns (pooled, argmax indices)."""
        arg = self.data.argmax(axis=axis)
        out_data = np.max(self.data, axis=axis)

        def backward(g, a=self, ax=axis, arg=arg):
            full = np.zeros_like(a.data)
            np.put_along_axis(full, np.expand_dims(arg, ax), np.expand_dims(g, ax), ax)
            a._accum(full)

        return Tensor._make(out_data, (self,), backward, "maxpool"), arg

    def softmax(self, axis=-1):
        shifted = self.data - self.data.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
        out_data = e / e.sum(axis=axis, keepdims=True)

        def backward(g, a=self, s=out_data, ax=axis):
            dot = (g * s).sum(axis=ax, keepdims=True)
            a._accum(s * (g - dot))

        return Tensor._make(out_data, (self,), backward, "softmax")

    def layernorm(self, eps=1e-8):
        """Normalize the last axis to zero mean / unit variance (no affine)."""
        mu = self.data.mean(axis=-1, keepdims=True)
        xc = self.data - mu
        var = (xc * xc).mean(axis=-1, keepdims=True)
        inv = 1.0 / np.sqrt(var + eps)
        out_data = xc * inv

        def backward(g, a=self, xc=xc, inv=inv):
            n = a.shape[-1]
            gm = g.mean(axis=-1, keepdims=True)
            gx = (g * xc).mean(axis=-1, keepdims=True)
            a._accum(inv * (g - gm) - xc * inv ** 3 * gx)

        return Tensor._make(out_data, (self,), backward, "layernorm")

    # -- backward pass --------------------------------------------------------

    def _accum(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64)
        else:
            self.grad = self.grad + g

    def backward(self):
        if self.data.ndim != 0 and self.data.size != 1:
            raise ShapeError("backward requires a scalar loss")
        if self._backward is None:
            raise ShapeError("loss is detached from the tape (nothing to differentiate)")
        order = []
        seen = set()
        stack_ = [(self, False)]
        while stack_:
            node, expanded = stack_.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack_.append((node, True))
            for p in node._parents:
                if p._backward is not None and id(p) not in seen:
                    stack_.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
        for node in order:  # free the tape
            node._parents = ()
            node._backward = None


# -- free functions -----------------------------------------------------------


def tensor(data, requires_grad=False):
    return Tensor(data, requires_grad=requires_grad)


def zeros(shape, requires_grad=False):
    return Tensor(np.zeros(shape), requires_grad=requires_grad)


def concat(tensors, axis=-1):
    tensors = [t if isinstance(t, Tensor) else Tensor(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g, ts=tuple(tensors), splits=splits, ax=axis):
        for t, piece in zip(ts, np.split(g, splits, axis=ax)):
            if t.requires_grad:
                t._accum(piece)

    return Tensor._make(out_data, tuple(tensors), backward, "concat")


def stack(tensors, axis=0):
    tensors = [t if isinstance(t, Tensor) else Tensor(t) for t in tensors]
    out_data = np.stack([t.data for t in tensors], axis=axis)

    def backward(g, ts=tuple(tensors), ax=axis):
        for i, t in enumerate(ts):
            if t.requires_grad:
                t._accum(np.take(g, i, axis=ax))

    return Tensor._make(out_data, tuple(tensors), backward, "stack")


def sinusoidal_embed(t, dim):
    """Classic sin/cos positional embedding of an integer timestep."""
    if dim % 2 != 0:
        raise ShapeError("embedding dimension must be even")
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / max(half - 1, 1))
    ang = float(t) * freqs
    return Tensor(np.concatenate([np.sin(ang), np.cos(ang)]))


# -- optimizers ---------------------------------------------------------------


class SGD:
    def __init__(self, params, lr):
        if lr < 0:
            raise ValueError("learning rate must be non-negative")
        self.params = list(params)
        self.lr = float(lr)
        self.step_count = 0

    def step(self):
        for p in self.params:
            if p.grad is not None:
                p.data -= self.lr * p.grad
                p.grad = None
        self.step_count += 1


class Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        if lr < 0:
            raise ValueError("learning rate must be non-negative")
        self.params = list(params)
        self.lr = float(lr)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.step_count = 0

    def step(self):
        self.step_count += 1
        t = self.step_count
        b1, b2 = self.beta1, self.beta2
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            g = p.grad
            self.m[i] = b1 * self.m[i] + (1 - b1) * g
            self.v[i] = b2 * self.v[i] + (1 - b2) * g * g
            mhat = self.m[i] / (1 - b1 ** t)
            vhat = self.v[i] / (1 - b2 ** t)
            p.data -= self.lr * mhat / (np.sqrt(vhat) + self.eps)
            p.grad = None


# -- gradient checking --------------------------------------------------------


def grad_check(build_loss, params, h=1e-6):
    """Max relative error between analytic and central-difference gradients.

    ``build_loss`` must be a deterministic zero-argument callable returning a
    scalar Tensor built from ``params``.
    """
    loss = build_loss()
    for p in params:
        p.grad = None
    loss = build_loss()
    loss.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    worst = 0.0
    for p, an in zip(params, analytic):
        flat = p.data.reshape(-1)
        an_flat = an.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            hi = build_loss().item()
            flat[i] = orig - h
            lo = build_loss().item()
            flat[i] = orig
            num = (hi - lo) / (2 * h)
            err = abs(an_flat[i] - num) / max(1e-8, abs(num))
            worst = max(worst, err)
        p.grad = None
    return worst
