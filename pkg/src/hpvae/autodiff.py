"""Minimal dense-tensor reverse-mode differentiation core.

Implements exactly the primitives the encoder/decoder networks need
(affine maps, tanh, log-softmax, elementwise exp/log/mul, clamp,
dropout masks, reductions) plus Gaussian reparameterized sampling and
an Adam optimizer.  Tensors hold float64 numpy arrays; every primitive
validates that its output is finite, so NaN/Inf surfaces as an error
instead of propagating silently.

Graphs are built define-by-run: applying a primitive records the
operation on the output tensor, and ``Tensor.backward`` walks the tape
in reverse topological order.  For a fixed model the op order is the
program order, which makes forward and backward deterministic functions
of (inputs, parameters, rng seed).
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Operand shapes incompatible for an op."""

    def __init__(self, op: str, expected, actual):
        self.op = op
        self.expected = expected
        self.actual = actual
        super().__init__(f"{op}: expected shape {expected}, got {actual}")


class NumericError(ArithmeticError):
    """A forward/backward value or gradient became NaN or Inf."""


def _check_finite(op: str, arr: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{op}: non-finite values produced")
    return arr


class Tensor:
    """A float64 array plus the tape entry that produced it.

    Leaf tensors are created directly (``trainable=True`` for
    parameters, ``False`` for constants/inputs); non-leaf tensors are
    created by the primitive functions below.  ``backward`` may only be
    called on a scalar that is the result of a forward computation.
    """

    __slots__ = ("data", "grad", "trainable", "name", "_parents", "_backward")

    def __init__(self, data, trainable=False, name=None, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.trainable = trainable
        self.name = name
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def backward(self):
        """Accumulate gradients of this scalar w.r.t. every tensor in its graph.

        Grads of all tensors reachable from here are reset to zero
        first, so each call yields the gradient of exactly this scalar.
        """
        if self.data.shape != ():
            raise ValueError(f"backward requires a scalar loss, got shape {self.data.shape}")
        if not self._parents:
            raise RuntimeError("backward called on a leaf tensor; run a forward computation first")

        order = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited:
                    stack.append((parent, False))

        for node in order:
            node.grad = np.zeros_like(node.data)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None:
                node._backward(node.grad)
        for node in order:
            if node.trainable:
                _check_finite("backward", node.grad)

    # Operator sugar; scalars and ndarrays are wrapped as constants.
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return add(self, mul(_as_tensor(other), _as_tensor(-1.0)))

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __neg__(self):
        return mul(self, _as_tensor(-1.0))

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))

    def __repr__(self):
        tag = self.name or ("param" if self.trainable else "tensor")
        return f"Tensor({tag}, shape={self.data.shape})"


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    keep = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if keep:
        grad = grad.sum(axis=keep, keepdims=True)
    return grad


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-D matrix product."""
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError("matmul", f"(n,k)@(k,m)", f"{a.data.shape}@{b.data.shape}")
    out = Tensor(_check_finite("matmul", a.data @ b.data), _parents=(a, b))

    def backward(g):
        a.grad += g @ b.data.T
        b.grad += a.data.T @ g

    out._backward = backward
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum with numpy broadcasting (e.g. row bias)."""
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeError("add", a.data.shape, b.data.shape) from None
    out = Tensor(_check_finite("add", data), _parents=(a, b))

    def backward(g):
        a.grad += _unbroadcast(g, a.data.shape)
        b.grad += _unbroadcast(g, b.data.shape)

    out._backward = backward
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product with numpy broadcasting."""
    try:
        data = a.data * b.data
    except ValueError:
        raise ShapeError("mul", a.data.shape, b.data.shape) from None
    out = Tensor(_check_finite("mul", data), _parents=(a, b))

    def backward(g):
        a.grad += _unbroadcast(g * b.data, a.data.shape)
        b.grad += _unbroadcast(g * a.data, b.data.shape)

    out._backward = backward
    return out


def tanh(a: Tensor) -> Tensor:
    out = Tensor(_check_finite("tanh", np.tanh(a.data)), _parents=(a,))

    def backward(g):
        a.grad += g * (1.0 - out.data * out.data)

    out._backward = backward
    return out


def exp(a: Tensor) -> Tensor:
    out = Tensor(_check_finite("exp", np.exp(a.data)), _parents=(a,))

    def backward(g):
        a.grad += g * out.data

    out._backward = backward
    return out


def log(a: Tensor) -> Tensor:
    out = Tensor(_check_finite("log", np.log(a.data)), _parents=(a,))

    def backward(g):
        a.grad += g / a.data

    out._backward = backward
    return out


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clip to [lo, hi]; gradient passes through only where unclipped."""
    out = Tensor(np.clip(a.data, lo, hi), _parents=(a,))
    inside = (a.data >= lo) & (a.data <= hi)

    def backward(g):
        a.grad += g * inside

    out._backward = backward
    return out


def log_softmax(a: Tensor) -> Tensor:
    """Row-wise log-softmax over the last axis."""
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    data = shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))
    out = Tensor(_check_finite("log_softmax", data), _parents=(a,))

    def backward(g):
        a.grad += g - np.exp(out.data) * g.sum(axis=-1, keepdims=True)

    out._backward = backward
    return out


def reduce_sum(a: Tensor, axis: int | None = None) -> Tensor:
    """Sum over one axis, or over all entries when ``axis`` is None."""
    out = Tensor(_check_finite("reduce_sum", np.sum(a.data, axis=axis)), _parents=(a,))

    def backward(g):
        if axis is None:
            a.grad += np.broadcast_to(g, a.data.shape)
        else:
            a.grad += np.broadcast_to(np.expand_dims(g, axis), a.data.shape)

    out._backward = backward
    return out


def dropout_mask(shape, rate: float, rng: np.random.Generator, training: bool = True) -> Tensor:
    """Inverted-dropout mask: Bernoulli(1-rate) scaled by 1/(1-rate).

    The identity mask is returned in inference mode.  Multiply the
    input by the mask; the mask itself carries no gradient.
    """
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return Tensor(np.ones(shape))
    keep = (rng.random(shape) >= rate).astype(np.float64)
    return Tensor(keep / (1.0 - rate))


def gaussian_sample(mu: Tensor, log_sigma: Tensor, rng: np.random.Generator) -> Tensor:
    """Reparameterized draw mu + exp(log_sigma) * eps with eps ~ N(0, I).

    Built from primitives, so gradients flow to mu and log_sigma but
    not to the noise.
    """
    if mu.data.shape != log_sigma.data.shape:
        raise ShapeError("gaussian_sample", mu.data.shape, log_sigma.data.shape)
    eps = Tensor(rng.standard_normal(mu.data.shape))
    return add(mu, mul(exp(log_sigma), eps))


def glorot_uniform(shape, rng: np.random.Generator) -> np.ndarray:
    """Uniform init in +/- sqrt(6 / (fan_in + fan_out))."""
    fan_in, fan_out = shape[0], shape[-1]
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class Adam:
    """Adam with bias correction over a named parameter dict.

    A step with any non-finite gradient raises NumericError before any
    state is touched, so the optimizer is never left half-updated.
    """

    def __init__(self, params: dict, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self, grads: dict | None = None):
        """Apply one update from ``grads`` (or each parameter's ``.grad``)."""
        if grads is None:
            grads = {k: p.grad for k, p in self.params.items()}
        for name in sorted(self.params):
            g = grads.get(name)
            if g is None:
                raise ValueError(f"missing gradient for parameter {name!r}")
            if g.shape != self.params[name].data.shape:
                raise ShapeError("adam_step", self.params[name].data.shape, g.shape)
            if not np.all(np.isfinite(g)):
                raise NumericError(f"adam_step: non-finite gradient for {name!r}; update aborted")
        self.step_count += 1
        t = self.step_count
        for name in sorted(self.params):
            g = grads[name]
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            m_hat = self.m[name] / (1.0 - self.beta1 ** t)
            v_hat = self.v[name] / (1.0 - self.beta2 ** t)
            self.params[name].data = self.params[name].data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def state_dict(self) -> dict:
        return {
            "step_count": self.step_count,
            "lr": self.lr,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "m": {k: v.copy() for k, v in self.m.items()},
            "v": {k: v.copy() for k, v in self.v.items()},
        }

    def load_state_dict(self, state: dict):
        self.step_count = int(state["step_count"])
        self.lr = float(state["lr"])
        self.beta1 = float(state["beta1"])
        self.beta2 = float(state["beta2"])
        self.eps = float(state["eps"])
        for k in self.m:
            self.m[k] = np.asarray(state["m"][k], dtype=np.float64)
            self.v[k] = np.asarray(state["v"][k], dtype=np.float64)
