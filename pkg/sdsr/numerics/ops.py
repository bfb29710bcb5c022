# Copyright 2026 British Broadcasting Corporation
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""Differentiable operations on Tensors.

Every function here computes its result with numpy and, when recording, registers an analytic backward. Binary
elementwise operations broadcast like numpy; the gradient is summed back down to each input's shape.
"""

from typing import Optional, Sequence, Tuple, Union

import numpy as np

from ..exceptions import DimensionError, IndexRangeError, NumericError, ContractError
from .tensor import Tensor, TensorLike, as_tensor, make_result, check_same_shape

__all__ = ["add", "sub", "mul", "neg", "matmul", "linear", "tanh", "sigmoid", "relu", "swish", "exp", "log",
           "reduce_sum", "reduce_mean", "reshape", "transpose", "concat", "stack", "getitem",
           "log_softmax", "softmax", "softmax_logsoftmax", "masked_softmax", "layer_norm",
           "kl_divergence", "cross_entropy"]


def _unbroadcast(g: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> Tuple[int, ...]:
    try:
        return tuple(np.broadcast_shapes(a.shape, b.shape))
    except ValueError:
        raise DimensionError("{}: shapes cannot be broadcast together".format(op), a.shape, b.shape)


def _check_finite(op: str, values: np.ndarray) -> None:
    if not np.all(np.isfinite(values)):
        raise NumericError("{}: input contains non-finite values".format(op))


def add(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)

    def backward(g: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        return (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape))
    return make_result(a.values + b.values, (a, b), backward, "add")


def sub(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)

    def backward(g: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        return (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape))
    return make_result(a.values - b.values, (a, b), backward, "sub")


def mul(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)

    def backward(g: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        return (_unbroadcast(g * b.values, a.shape), _unbroadcast(g * a.values, b.shape))
    return make_result(a.values * b.values, (a, b), backward, "mul")


def neg(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    return make_result(-a.values, (a,), lambda g: (-g,), "neg")


def matmul(a: TensorLike, b: TensorLike) -> Tensor:
    """Matrix product over the last two axes, with numpy broadcasting over any leading axes"""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError("matmul: inner dimensions do not agree", a.shape, b.shape)

    def backward(g: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        ga = g @ np.swapaxes(b.values, -1, -2)
        gb = np.swapaxes(a.values, -1, -2) @ g
        return (_unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape))
    return make_result(a.values @ b.values, (a, b), backward, "matmul")


def linear(x: TensorLike, W: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """The affine map y = W.x + b applied along the last axis of x.

    :param x: Tensor[..., D_in]
    :param W: Tensor[D_out, D_in]
    :param b: optional Tensor[D_out]
    :raises DimensionError: naming both shapes when they disagree
    """
    x = as_tensor(x)
    if W.ndim != 2 or x.ndim < 1 or x.shape[-1] != W.shape[1]:
        raise DimensionError("linear: input does not match weight", x.shape, W.shape)
    if b is not None and b.shape != (W.shape[0],):
        raise DimensionError("linear: bias does not match weight", b.shape, W.shape)

    d_out, d_in = W.shape
    y = x.values @ W.values.T
    if b is not None:
        y = y + b.values

    def backward(g: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        g2 = g.reshape(-1, d_out)
        x2 = x.values.reshape(-1, d_in)
        gx = g @ W.values
        gW = g2.T @ x2
        if b is None:
            return (gx, gW)
        return (gx, gW, g2.sum(axis=0))

    inputs = (x, W) if b is None else (x, W, b)
    return make_result(y, inputs, backward, "linear")


def tanh(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    y = np.tanh(a.values)
    return make_result(y, (a,), lambda g: (g * (1.0 - y * y),), "tanh")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return np.exp(-np.logaddexp(0.0, -x))


def sigmoid(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    y = _sigmoid(a.values)
    return make_result(y, (a,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def relu(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    mask = a.values > 0
    return make_result(np.where(mask, a.values, 0.0), (a,), lambda g: (g * mask,), "relu")


def swish(a: TensorLike) -> Tensor:
    """x * sigmoid(x), the smooth activation used in the feed-forward blocks"""
    a = as_tensor(a)
    s = _sigmoid(a.values)

    def backward(g: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        return (g * (s + a.values * s * (1.0 - s)),)
    return make_result(a.values * s, (a,), backward, "swish")


def exp(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    y = np.exp(a.values)
    return make_result(y, (a,), lambda g: (g * y,), "exp")


def log(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    if np.any(a.values <= 0):
        raise NumericError("log: input must be strictly positive")
    return make_result(np.log(a.values), (a,), lambda g: (g / a.values,), "log")


def reduce_sum(a: TensorLike, axis: Optional[int] = None) -> Tensor:
    a = as_tensor(a)

    def backward(g: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.array(np.broadcast_to(g, a.shape)),)
    return make_result(a.values.sum(axis=axis), (a,), backward, "sum")


def reduce_mean(a: TensorLike, axis: Optional[int] = None) -> Tensor:
    a = as_tensor(a)
    count = a.size if axis is None else a.shape[axis]
    if count == 0:
        raise ContractError("mean of an empty tensor")

    def backward(g: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.array(np.broadcast_to(g / count, a.shape)),)
    return make_result(a.values.mean(axis=axis), (a,), backward, "mean")


def reshape(a: TensorLike, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
        shape = shape[0]
    try:
        y = a.values.reshape(tuple(shape))
    except ValueError:
        raise DimensionError("reshape: sizes differ", a.shape, tuple(shape))
    return make_result(y, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a: TensorLike) -> Tensor:
    """Swap the last two axes"""
    a = as_tensor(a)
    if a.ndim < 2:
        raise DimensionError("transpose needs at least two axes", a.shape)
    return make_result(np.swapaxes(a.values, -1, -2), (a,), lambda g: (np.swapaxes(g, -1, -2),), "transpose")


def concat(tensors: Sequence[TensorLike], axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise ContractError("concat of no tensors")
    try:
        y = np.concatenate([t.values for t in ts], axis=axis)
    except ValueError:
        raise DimensionError("concat: shapes do not agree off the joined axis", *[t.shape for t in ts])
    splits = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def backward(g: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        return tuple(np.split(g, splits, axis=axis))
    return make_result(y, ts, backward, "concat")


def stack(tensors: Sequence[TensorLike]) -> Tensor:
    """Stack equally shaped tensors along a new leading axis"""
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise ContractError("stack of no tensors")
    for t in ts[1:]:
        check_same_shape("stack", ts[0], t)

    def backward(g: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        return tuple(g[i] for i in range(len(ts)))
    return make_result(np.stack([t.values for t in ts]), ts, backward, "stack")


def getitem(a: TensorLike, index: object) -> Tensor:
    """Basic or integer-array indexing. Repeated indices accumulate their gradients."""
    a = as_tensor(a)
    try:
        y = a.values[index]
    except IndexError as e:
        raise IndexRangeError("index out of range for shape {}: {}".format(a.shape, e))

    def backward(g: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        full = np.zeros_like(a.values)
        np.add.at(full, index, g)
        return (full,)
    return make_result(np.array(y, dtype=np.float64), (a,), backward, "getitem")


def log_softmax(z: TensorLike, axis: int = -1) -> Tensor:
    """Log-softmax along an axis, computed with max-subtraction

    :raises NumericError: if any input is not finite
    """
    z = as_tensor(z)
    _check_finite("log_softmax", z.values)
    if z.ndim == 0 or z.shape[axis] < 1:
        raise DimensionError("log_softmax needs at least one class", z.shape)
    s = z.values - z.values.max(axis=axis, keepdims=True)
    y = s - np.log(np.exp(s).sum(axis=axis, keepdims=True))
    p = np.exp(y)

    def backward(g: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        return (g - p * g.sum(axis=axis, keepdims=True),)
    return make_result(y, (z,), backward, "log_softmax")


def softmax(z: TensorLike, axis: int = -1) -> Tensor:
    return exp(log_softmax(z, axis))


def softmax_logsoftmax(z: TensorLike, axis: int = -1) -> Tuple[Tensor, Tensor]:
    """Both the probabilities and the log-probabilities of z, the former derived from the latter"""
    ls = log_softmax(z, axis)
    return exp(ls), ls


def masked_softmax(scores: TensorLike, mask: np.ndarray, axis: int = -1) -> Tensor:
    """Softmax over the entries where mask is true. Masked entries get exactly zero weight and zero gradient.

    :param scores: the attention scores
    :param mask: boolean array broadcastable to scores, true where an entry is visible
    :raises ContractError: if some row has no visible entry
    """
    scores = as_tensor(scores)
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), scores.shape)
    if not np.all(mask.any(axis=axis)):
        raise ContractError("masked_softmax: a row has no visible entries")
    s = np.where(mask, scores.values, -np.inf)
    _check_finite("masked_softmax", s[mask])
    e = np.exp(s - s.max(axis=axis, keepdims=True))
    p = e / e.sum(axis=axis, keepdims=True)

    def backward(g: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        return (p * (g - (g * p).sum(axis=axis, keepdims=True)),)
    return make_result(p, (scores,), backward, "masked_softmax")


def layer_norm(x: TensorLike, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise the last axis to zero mean and unit variance, then scale by gamma and shift by beta"""
    x = as_tensor(x)
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise DimensionError("layer_norm: scale and shift must match the last axis", x.shape, gamma.shape)
    mu = x.values.mean(axis=-1, keepdims=True)
    xc = x.values - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv

    def backward(g: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        gxhat = g * gamma.values
        gx = (inv / d) * (d * gxhat
                          - gxhat.sum(axis=-1, keepdims=True)
                          - xhat * (gxhat * xhat).sum(axis=-1, keepdims=True))
        return (gx, _unbroadcast(g * xhat, gamma.shape), _unbroadcast(g, beta.shape))
    return make_result(xhat * gamma.values + beta.values, (x, gamma, beta), backward, "layer_norm")


def kl_divergence(p_log: Tensor, q_log: Tensor, detach_target: bool = True) -> Tensor:
    """Sum over all rows of KL(p || q) = sum p.(log p - log q), given both as log-distributions.

    With detach_target the gradient reaches p_log only; q_log is treated as a constant.

    :raises DimensionError: if the shapes differ
    """
    check_same_shape("kl_divergence", p_log, q_log)
    q = q_log.detach() if detach_target else q_log
    return reduce_sum(mul(exp(p_log), sub(p_log, q)))


def cross_entropy(logits: TensorLike, targets: Union[int, Sequence[int], np.ndarray]) -> Tensor:
    """Mean over rows of -log_softmax(logits)[target]

    :param logits: Tensor[.., V]; every leading axis is flattened into rows
    :param targets: one class index per row, shaped like the leading axes of logits or flat
    :raises IndexRangeError: if a target is outside [0, V)
    """
    logits = as_tensor(logits)
    if logits.ndim == 0:
        raise DimensionError("cross_entropy: logits need a class axis", logits.shape)
    idx = np.asarray(targets, dtype=np.int64)
    n, v = int(np.prod(logits.shape[:-1], dtype=np.int64)), logits.shape[-1]
    if idx.shape != logits.shape[:-1] and idx.shape != (n,):
        raise DimensionError("cross_entropy: one target per row needed", logits.shape, idx.shape)
    idx = idx.reshape(-1)
    if np.any(idx < 0) or np.any(idx >= v):
        raise IndexRangeError("cross_entropy: target index outside [0, {})".format(v))
    ls = log_softmax(reshape(logits, (n, v)))
    return neg(reduce_mean(getitem(ls, (np.arange(n), idx))))
