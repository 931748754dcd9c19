"""A small reverse-mode automatic differentiation engine over numpy arrays.

Each :class:`Tensor` records its parents and a closure that pushes the
incoming gradient back to them. :meth:`Tensor.backward` walks the graph in
reverse topological order. Only the operations the rest of the package
needs are provided.
"""

import numpy as np

from grasplab import kernels


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype})"

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed needs a scalar tensor")
            grad = np.ones_like(self.data)
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                stack.append((p, False))
        self._accumulate(grad)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return add(self, neg(other))

    def __rsub__(self, other):
        return add(other, neg(self))

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return Tensor(a.data + b.data, _parents=(a, b), _backward=backward)


def neg(a):
    a = as_tensor(a)
    return Tensor(-a.data, _parents=(a,), _backward=lambda g: a._accumulate(-g))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return Tensor(a.data * b.data, _parents=(a, b), _backward=backward)


def matmul(a, b):
    """2-D matrix product."""
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)

    return Tensor(a.data @ b.data, _parents=(a, b), _backward=backward)


def dense(x, weight, bias):
    """Affine map ``x @ weight.T + bias`` with weight shaped (out, in)."""
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)

    def backward(g):
        if x.requires_grad:
            x._accumulate(g @ weight.data)
        if weight.requires_grad:
            weight._accumulate(g.T @ x.data)
        if bias.requires_grad:
            bias._accumulate(g.sum(axis=0))

    out = x.data @ weight.data.T + bias.data
    return Tensor(out, _parents=(x, weight, bias), _backward=backward)


def relu(a):
    a = as_tensor(a)
    mask = a.data > 0
    return Tensor(np.where(mask, a.data, 0).astype(a.data.dtype, copy=False),
                  _parents=(a,), _backward=lambda g: a._accumulate(g * mask))


def sigmoid(a):
    a = as_tensor(a)
    s = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return Tensor(s, _parents=(a,), _backward=lambda g: a._accumulate(g * s * (1 - s)))


def reshape(a, shape):
    a = as_tensor(a)
    old = a.shape
    return Tensor(a.data.reshape(shape), _parents=(a,),
                  _backward=lambda g: a._accumulate(g.reshape(old)))


def tensor_sum(a):
    a = as_tensor(a)
    return Tensor(a.data.sum(), _parents=(a,),
                  _backward=lambda g: a._accumulate(np.broadcast_to(g, a.shape)))


def abs_sum(a):
    """L1 norm; subgradient 0 at 0."""
    a = as_tensor(a)
    return Tensor(np.abs(a.data).sum(), _parents=(a,),
                  _backward=lambda g: a._accumulate(g * np.sign(a.data)))


def conv2d(x, weight, bias, stride=1, padding=0):
    """Cross-correlation over NCHW input with weight shaped (O, C, kh, kw)."""
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    N, C, H, W = x.shape
    O, _, kh, kw = weight.shape
    oh = (H + 2 * padding - kh) // stride + 1
    ow = (W + 2 * padding - kw) // stride + 1
    cols = kernels.im2col(x.data, kh, kw, stride, padding)  # (N, C*kh*kw, L)
    wmat = weight.data.reshape(O, -1)
    out = np.matmul(wmat, cols) + bias.data[None, :, None]

    def backward(g):
        g = g.reshape(N, O, oh * ow)
        if weight.requires_grad:
            gw = np.tensordot(g, cols, axes=([0, 2], [0, 2]))
            weight._accumulate(gw.reshape(weight.shape))
        if bias.requires_grad:
            bias._accumulate(g.sum(axis=(0, 2)))
        if x.requires_grad:
            gcols = np.matmul(wmat.T, g)
            x._accumulate(kernels.col2im(gcols, (N, C, H, W), kh, kw, stride, padding))

    return Tensor(out.reshape(N, O, oh, ow), _parents=(x, weight, bias), _backward=backward)


def log_softmax(logits):
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    out = z - lse
    soft = np.exp(out)

    def backward(g):
        logits._accumulate(g - soft * g.sum(axis=1, keepdims=True))

    return Tensor(out, _parents=(logits,), _backward=backward)


def cross_entropy(logits, labels):
    """Mean negative log-likelihood of integer ``labels``."""
    logits = as_tensor(logits)
    labels = np.asarray(labels)
    n = logits.shape[0]
    lp = log_softmax(logits)
    pick = np.zeros_like(lp.data)
    pick[np.arange(n), labels] = -1.0 / n
    return Tensor((lp.data * pick).sum(), _parents=(lp,),
                  _backward=lambda g: lp._accumulate(g * pick))


def square_loss(outputs, targets):
    """``1/(2n) * sum_i ||f(x_i) - t_i||^2`` over a batch of n rows."""
    outputs = as_tensor(outputs)
    targets = np.asarray(targets, dtype=outputs.data.dtype)
    n = outputs.shape[0]
    resid = outputs.data - targets
    return Tensor(0.5 * (resid ** 2).sum() / n, _parents=(outputs,),
                  _backward=lambda g: outputs._accumulate(g * resid / n))
