"""Minimal reverse-mode automatic differentiation over numpy arrays.

Tensors wrap ndarrays and record a tape of backward closures. The method
surface mirrors numpy (`sum`, `reshape`, `transpose`, operators, indexing)
so model code written against it also runs directly on plain ndarrays for
gradient-free inference; the free functions at the bottom dispatch on type
for the few ops ndarrays lack as methods.
"""

from __future__ import annotations

import numpy as np

_GELU_C = 0.7978845608028654  # sqrt(2/pi)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcasted gradient back down to the original shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, (g, s) in enumerate(zip(grad.shape, shape)):
        if s == 1 and g != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    # keep numpy from hijacking ndarray-op-Tensor expressions; our reflected
    # dunders must run instead
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False, parents=(), backward=None):
        self.data = data if isinstance(data, np.ndarray) else np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def _accumulate(self, grad: np.ndarray) -> None:
        if self.grad is None:
            # copy: incoming grads may be views or shared with siblings
            self.grad = np.array(grad, dtype=self.data.dtype)
        else:
            self.grad += grad

    def _coerce(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            return other
        if isinstance(other, (int, float)):
            # match our dtype: a 0-d float64 array would silently upcast
            # float32 graphs
            return Tensor(np.asarray(other, dtype=self.data.dtype))
        return Tensor(other)

    # -- arithmetic --------------------------------------------------------

    def __add__(self, other):
        other = self._coerce(other)
        out_data = self.data + other.data
        rg = self.requires_grad or other.requires_grad
        if not rg:
            return Tensor(out_data)
        out = Tensor(out_data, True, (self, other))

        def backward():
            if self.requires_grad:
                self._accumulate(_unbroadcast(out.grad, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(out.grad, other.shape))

        out._backward = backward
        return out

    __radd__ = __add__

    def __neg__(self):
        if not self.requires_grad:
            return Tensor(-self.data)
        out = Tensor(-self.data, True, (self,))
        out._backward = lambda: self._accumulate(-out.grad)
        return out

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return self._coerce(other) + (-self)

    def __mul__(self, other):
        other = self._coerce(other)
        out_data = self.data * other.data
        rg = self.requires_grad or other.requires_grad
        if not rg:
            return Tensor(out_data)
        out = Tensor(out_data, True, (self, other))

        def backward():
            if self.requires_grad:
                self._accumulate(_unbroadcast(out.grad * other.data, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(out.grad * self.data, other.shape))

        out._backward = backward
        return out

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self * self._coerce(other) ** -1.0

    def __rtruediv__(self, other):
        return self._coerce(other) * self ** -1.0

    def __pow__(self, exponent: float):
        out_data = self.data**exponent
        if not self.requires_grad:
            return Tensor(out_data)
        out = Tensor(out_data, True, (self,))

        def backward():
            self._accumulate(out.grad * exponent * self.data ** (exponent - 1.0))

        out._backward = backward
        return out

    def __matmul__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other)
        return self._matmul(other)

    def __rmatmul__(self, other):
        return Tensor(other)._matmul(self)

    def _matmul(self, other: "Tensor"):
        if self.ndim != other.ndim or self.ndim not in (2, 3):
            raise ValueError(f"matmul supports matching 2-D/3-D shapes, got {self.shape} @ {other.shape}")
        out_data = self.data @ other.data
        rg = self.requires_grad or other.requires_grad
        if not rg:
            return Tensor(out_data)
        out = Tensor(out_data, True, (self, other))

        def backward():
            if self.requires_grad:
                self._accumulate(out.grad @ np.swapaxes(other.data, -1, -2))
            if other.requires_grad:
                other._accumulate(np.swapaxes(self.data, -1, -2) @ out.grad)

        out._backward = backward
        return out

    # -- shape ops ---------------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        out_data = self.data.reshape(shape)
        if not self.requires_grad:
            return Tensor(out_data)
        out = Tensor(out_data, True, (self,))
        out._backward = lambda: self._accumulate(out.grad.reshape(self.shape))
        return out

    def transpose(self, axes):
        out_data = self.data.transpose(axes)
        if not self.requires_grad:
            return Tensor(out_data)
        out = Tensor(out_data, True, (self,))
        inverse = np.argsort(axes)
        out._backward = lambda: self._accumulate(out.grad.transpose(inverse))
        return out

    def __getitem__(self, index):
        out_data = self.data[index]
        if not self.requires_grad:
            return Tensor(out_data)
        out = Tensor(out_data, True, (self,))

        def backward():
            full = np.zeros_like(self.data)
            np.add.at(full, index, out.grad)
            self._accumulate(full)

        out._backward = backward
        return out

    # -- reductions and elementwise ----------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        out_data = self.data.sum(axis=axis, keepdims=keepdims)
        if not self.requires_grad:
            return Tensor(out_data)
        out = Tensor(out_data, True, (self,))

        def backward():
            g = out.grad
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            self._accumulate(np.broadcast_to(g, self.shape).copy())

        out._backward = backward
        return out

    def exp(self):
        out_data = np.exp(self.data)
        if not self.requires_grad:
            return Tensor(out_data)
        out = Tensor(out_data, True, (self,))
        out._backward = lambda: self._accumulate(out.grad * out.data)
        return out

    def log(self):
        out_data = np.log(self.data)
        if not self.requires_grad:
            return Tensor(out_data)
        out = Tensor(out_data, True, (self,))
        out._backward = lambda: self._accumulate(out.grad / self.data)
        return out

    def tanh(self):
        out_data = np.tanh(self.data)
        if not self.requires_grad:
            return Tensor(out_data)
        out = Tensor(out_data, True, (self,))
        out._backward = lambda: self._accumulate(out.grad * (1.0 - out.data * out.data))
        return out

    # -- fused ops (hot path; closed-form backwards) -------------------------

    def gelu(self):
        d = self.data
        sq = d * d
        u = _GELU_C * (d + 0.044715 * sq * d)
        t = np.tanh(u)
        out_data = 0.5 * d * (1.0 + t)
        if not self.requires_grad:
            return Tensor(out_data)
        out = Tensor(out_data, True, (self,))

        def backward():
            du = _GELU_C * (1.0 + 3 * 0.044715 * sq)
            self._accumulate(out.grad * (0.5 * (1.0 + t) + 0.5 * d * (1.0 - t * t) * du))

        out._backward = backward
        return out

    def softmax(self, axis: int = -1):
        shifted = self.data - self.data.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
        s = e / e.sum(axis=axis, keepdims=True)
        if not self.requires_grad:
            return Tensor(s)
        out = Tensor(s, True, (self,))

        def backward():
            g = out.grad
            self._accumulate(s * (g - (g * s).sum(axis=axis, keepdims=True)))

        out._backward = backward
        return out

    def layer_norm(self, gain, bias, eps: float = 1e-5):
        mean = self.data.mean(axis=-1, keepdims=True)
        var = self.data.var(axis=-1, keepdims=True)
        inv = 1.0 / np.sqrt(var + eps)
        xn = (self.data - mean) * inv
        gain_t = self._coerce(gain)
        bias_t = self._coerce(bias)
        out_data = xn * gain_t.data + bias_t.data
        if not (self.requires_grad or gain_t.requires_grad or bias_t.requires_grad):
            return Tensor(out_data)
        out = Tensor(out_data, True, (self, gain_t, bias_t))

        def backward():
            g = out.grad
            if gain_t.requires_grad:
                axes = tuple(range(g.ndim - 1))
                gain_t._accumulate((g * xn).sum(axis=axes))
            if bias_t.requires_grad:
                axes = tuple(range(g.ndim - 1))
                bias_t._accumulate(g.sum(axis=axes))
            if self.requires_grad:
                dxn = g * gain_t.data
                term = dxn - dxn.mean(axis=-1, keepdims=True) - xn * (dxn * xn).mean(axis=-1, keepdims=True)
                self._accumulate(inv * term)

        out._backward = backward
        return out


def backward(loss: Tensor) -> None:
    """Reverse-mode sweep from a scalar loss; accumulates into .grad."""
    if loss.data.size != 1:
        raise ValueError(f"backward expects a scalar loss, got shape {loss.shape}")
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            stack.append((parent, False))
    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward is not None:
            node._backward()


# -- type-dispatching helpers (work on Tensor and ndarray alike) -----------

def tanh(x):
    return x.tanh() if isinstance(x, Tensor) else np.tanh(x)


def exp(x):
    return x.exp() if isinstance(x, Tensor) else np.exp(x)


def log(x):
    return x.log() if isinstance(x, Tensor) else np.log(x)


def concat(parts, axis: int = 0):
    if not any(isinstance(p, Tensor) for p in parts):
        return np.concatenate(parts, axis=axis)
    tensors = [p if isinstance(p, Tensor) else Tensor(p) for p in parts]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    rg = any(t.requires_grad for t in tensors)
    if not rg:
        return Tensor(out_data)
    out = Tensor(out_data, True, tuple(tensors))

    def backward_fn():
        offset = 0
        for t in tensors:
            size = t.shape[axis]
            sl = [slice(None)] * out_data.ndim
            sl[axis] = slice(offset, offset + size)
            if t.requires_grad:
                t._accumulate(out.grad[tuple(sl)])
            offset += size

    out._backward = backward_fn
    return out


def detached_max(x, axis=None, keepdims: bool = False):
    """Max of the underlying values as a plain constant (no gradient)."""
    data = x.data if isinstance(x, Tensor) else x
    return data.max(axis=axis, keepdims=keepdims)


def softmax(x, axis: int = -1):
    if isinstance(x, Tensor):
        return x.softmax(axis=axis)
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def gelu(x):
    # tanh approximation of the gaussian-error linear unit
    if isinstance(x, Tensor):
        return x.gelu()
    return 0.5 * x * (1.0 + np.tanh(_GELU_C * (x + 0.044715 * x * x * x)))


def layer_norm(x, gain, bias, eps: float = 1e-5):
    if isinstance(x, Tensor):
        return x.layer_norm(gain, bias, eps=eps)
    mean = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    xn = (x - mean) / np.sqrt(var + eps)
    return xn * value(gain) + value(bias)


def sigmoid(x):
    return 0.5 * (tanh(0.5 * x) + 1.0)


def value(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else x
