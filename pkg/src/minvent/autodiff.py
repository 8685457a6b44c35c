"""Small reverse-mode differentiation engine over numpy arrays.

Only the kernels the VGG-style regressors need are provided: 1-D
convolution, dense layers, ReLU, 1-D max pooling, flatten, elementwise
add/mul, sum, strided subsampling and MSE.  Every op records a closure
that maps the output gradient to input gradients; :meth:`Tensor.backward`
walks the recorded graph in reverse topological order.

Leaf tensors (``requires_grad=True`` with no parents) *accumulate* into
``.grad`` across calls to ``backward``; call :meth:`Tensor.zero_grad`
between steps.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ContractError

DEFAULT_DTYPE = np.float32


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, dtype=None,
                 _parents: tuple = (), _backward: Callable | None = None,
                 op: str = "leaf"):
        arr = np.asarray(data, dtype=dtype if dtype is not None else None)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = _parents
        self._backward = _backward
        self.op = op

    # -- basic introspection -------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return int(self.data.size)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, op={self.op})"

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    # -- operator sugar ------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def sum(self):
        return tsum(self)

    # -- reverse pass --------------------------------------------------------
    def backward(self):
        """Populate ``grad`` on every reachable leaf that requires it."""
        if self.data.size != 1:
            raise ContractError(
                f"backward() needs a scalar loss, got shape {self.shape}")
        order = _topological_order(self)
        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not _needs_grad(parent):
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg


def _needs_grad(t: Tensor) -> bool:
    return t.requires_grad


def _topological_order(root: Tensor) -> list:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def _result(data, parents: Sequence[Tensor], backward, op: str) -> Tensor:
    needs = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=needs, dtype=data.dtype,
                  _parents=tuple(parents) if needs else (),
                  _backward=backward if needs else None, op=op)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# -- elementwise ---------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.data + b.data
    except ValueError as exc:
        raise ContractError(f"add: shapes {a.shape} and {b.shape} do not broadcast") from exc

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(out, (a, b), backward, "add")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.data * b.data
    except ValueError as exc:
        raise ContractError(f"mul: shapes {a.shape} and {b.shape} do not broadcast") from exc

    def backward(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _result(out, (a, b), backward, "mul")


def tsum(x: Tensor) -> Tensor:
    out = np.asarray(x.data.sum(), dtype=x.dtype).reshape(())

    def backward(g):
        return (np.broadcast_to(g, x.shape).astype(x.dtype),)

    return _result(out, (x,), backward, "sum")


def relu(x: Tensor) -> Tensor:
    x = as_tensor(x)
    keep = x.data > 0
    out = np.where(keep, x.data, 0).astype(x.dtype)

    def backward(g):
        return (g * keep,)

    return _result(out, (x,), backward, "relu")


def flatten(x: Tensor) -> Tensor:
    """Collapse every axis after the batch axis."""
    x = as_tensor(x)
    shape = x.shape
    out = x.data.reshape(shape[0], -1)

    def backward(g):
        return (g.reshape(shape),)

    return _result(out, (x,), backward, "flatten")


def subsample(x: Tensor, step: int, length: int) -> Tensor:
    """Take every ``step``-th sample along the last axis, keep ``length``."""
    x = as_tensor(x)
    if step < 1 or -(-x.shape[-1] // step) < length:
        raise ContractError(
            f"subsample: cannot take {length} samples every {step} from length {x.shape[-1]}")
    out = x.data[..., ::step][..., :length]

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[..., ::step][..., :length] = g
        return (gx,)

    return _result(np.ascontiguousarray(out), (x,), backward, "subsample")


# -- layers --------------------------------------------------------------------

def dense(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x[N, in] @ weight[out, in].T + bias[out]``."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.data.ndim != 2 or weight.data.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ContractError(f"dense: input {x.shape} incompatible with weight {weight.shape}")
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (weight.shape[0],):
            raise ContractError(f"dense: bias {bias.shape} != ({weight.shape[0]},)")
    out = x.data @ weight.data.T
    if bias is not None:
        out = out + bias.data

    def backward(g):
        gx = g @ weight.data if x.requires_grad else None
        gw = g.T @ x.data if weight.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=0)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _result(out, parents, backward, "dense")


def conv1d_output_length(length: int, kernel: int, stride: int = 1, padding: int = 0) -> int:
    return (length + 2 * padding - kernel) // stride + 1


def conv1d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of ``x[N, C_in, L]`` with ``weight[C_out, C_in, K]``."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.data.ndim != 3 or weight.data.ndim != 3:
        raise ContractError(f"conv1d: need 3-D input and weight, got {x.shape} and {weight.shape}")
    n, c_in, length = x.shape
    c_out, w_in, k = weight.shape
    if w_in != c_in:
        raise ContractError(f"conv1d: input has {c_in} channels, weight expects {w_in}")
    if stride < 1 or length + 2 * padding < k:
        raise ContractError(
            f"conv1d: length {length} with padding {padding} too short for kernel {k} (stride {stride})")
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (c_out,):
            raise ContractError(f"conv1d: bias {bias.shape} != ({c_out},)")
    l_out = conv1d_output_length(length, k, stride, padding)
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding))) if padding else x.data
    # cols[n, l, c, k]
    cols = sliding_window_view(xp, k, axis=2)[:, :, ::stride, :][:, :, :l_out, :]
    cols = np.ascontiguousarray(cols.transpose(0, 2, 1, 3)).reshape(n * l_out, c_in * k)
    w2 = weight.data.reshape(c_out, c_in * k)
    out = (cols @ w2.T).reshape(n, l_out, c_out).transpose(0, 2, 1)
    if bias is not None:
        out = out + bias.data[None, :, None]
    out = np.ascontiguousarray(out)

    def backward(g):
        g2 = np.ascontiguousarray(g.transpose(0, 2, 1)).reshape(n * l_out, c_out)
        gw = (g2.T @ cols).reshape(weight.shape) if weight.requires_grad else None
        gx = None
        if x.requires_grad:
            dcols = (g2 @ w2).reshape(n, l_out, c_in, k)
            gxp = np.zeros(xp.shape, dtype=xp.dtype)
            span = stride * (l_out - 1) + 1
            for j in range(k):
                gxp[:, :, j:j + span:stride] += dcols[:, :, :, j].transpose(0, 2, 1)
            gx = gxp[:, :, padding:padding + length] if padding else gxp
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2))

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _result(out, parents, backward, "conv1d")


def maxpool1d(x: Tensor, kernel: int, stride: int | None = None) -> Tensor:
    """Max over sliding windows on the last axis; argmax kept for backward."""
    x = as_tensor(x)
    stride = kernel if stride is None else stride
    if x.data.ndim != 3:
        raise ContractError(f"maxpool1d: need [N, C, L] input, got {x.shape}")
    n, c, length = x.shape
    if kernel < 1 or stride < 1 or length < kernel:
        raise ContractError(f"maxpool1d: length {length} too short for kernel {kernel}")
    l_out = (length - kernel) // stride + 1
    win = sliding_window_view(x.data, kernel, axis=2)[:, :, ::stride, :][:, :, :l_out, :]
    arg = win.argmax(axis=3)
    out = np.take_along_axis(win, arg[..., None], axis=3)[..., 0]
    pos = arg + (np.arange(l_out) * stride)[None, None, :]

    def backward(g):
        gx = np.zeros_like(x.data)
        if kernel <= stride:
            # windows do not overlap: every output owns one input slot
            np.put_along_axis(gx, pos, g, axis=2)
        else:
            ni, ci = np.meshgrid(np.arange(n), np.arange(c), indexing="ij")
            np.add.at(gx, (ni[..., None], ci[..., None], pos), g)
        return (gx,)

    return _result(np.ascontiguousarray(out), (x,), backward, "maxpool1d")


def mse_loss(pred: Tensor, target) -> Tensor:
    """Mean of squared elementwise differences."""
    pred, target = as_tensor(pred), as_tensor(target, dtype=as_tensor(pred).dtype)
    if pred.shape != target.shape:
        raise ContractError(f"mse_loss: pred {pred.shape} vs target {target.shape}")
    diff = pred.data - target.data
    n = diff.size
    out = np.asarray((diff * diff).sum() / n, dtype=pred.dtype).reshape(())

    def backward(g):
        gp = (2.0 / n) * g * diff
        return gp.astype(pred.dtype), (-gp).astype(pred.dtype)

    return _result(out, (pred, target), backward, "mse")
