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

"""Building blocks shared by the encoder, the label predictor and the wait-k decoder."""

from typing import List, Sequence, Tuple

import numpy as np

from .exceptions import DimensionError
from .numerics import (Module, Tensor, TensorLike, init_weight, linear, layer_norm, swish, sigmoid, tanh,
                       matmul, transpose, mul, add, concat, getitem, masked_softmax, as_tensor)

__all__ = ["Linear", "LayerNorm", "FeedForward", "MultiHeadSelfAttention", "TransformerLayer", "LSTMCell",
           "sinusoid", "band_mask", "causal_mask"]


def sinusoid(positions: Sequence[float], dim: int) -> np.ndarray:
    """Sinusoidal position codes, one row per position. Positions may be any integers, including negative ones."""
    pos = np.asarray(positions, dtype=np.float64).reshape(-1, 1)
    freq = 1.0 / np.power(10000.0, np.arange(0, dim, 2, dtype=np.float64) / dim)
    out = np.zeros((pos.shape[0], dim))
    out[:, 0::2] = np.sin(pos * freq)
    out[:, 1::2] = np.cos(pos * freq[:dim // 2])
    return out


def band_mask(n: int, left: int, right: int) -> np.ndarray:
    """Boolean [n, n] mask; row t may see column s when t - left <= s <= t + right"""
    t = np.arange(n).reshape(-1, 1)
    s = np.arange(n).reshape(1, -1)
    return (s >= t - left) & (s <= t + right)


def causal_mask(n: int) -> np.ndarray:
    return band_mask(n, n, 0)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True):
        super().__init__()
        self.d_in = d_in
        self.d_out = d_out
        self.weight = self.param("weight", init_weight(rng, d_out, d_in))
        self.bias = self.param("bias", np.zeros(d_out)) if bias else None

    def __call__(self, x: TensorLike) -> Tensor:
        return linear(x, self.weight, self.bias)

    def macs_per_frame(self) -> int:
        return self.d_in * self.d_out


class LayerNorm(Module):
    def __init__(self, dim: int):
        super().__init__()
        self.gamma = self.param("gamma", np.ones(dim))
        self.beta = self.param("beta", np.zeros(dim))

    def __call__(self, x: TensorLike) -> Tensor:
        return layer_norm(x, self.gamma, self.beta)

    def macs_per_frame(self) -> int:
        return 0


class FeedForward(Module):
    def __init__(self, dim: int, hidden: int, rng: np.random.Generator):
        super().__init__()
        self.up = self.child("up", Linear(dim, hidden, rng))
        self.down = self.child("down", Linear(hidden, dim, rng))

    def __call__(self, x: TensorLike) -> Tensor:
        return self.down(swish(self.up(x)))


class MultiHeadSelfAttention(Module):
    """Scaled dot-product self-attention over the rows of a [.., L, D] input, one head at a time; leading axes hold
    independent sequences.

    Masked entries get exactly zero weight, so the output row for a query never depends on a masked key.
    """

    def __init__(self, dim: int, num_heads: int, rng: np.random.Generator):
        super().__init__()
        if dim % num_heads != 0:
            raise DimensionError("model dimension must be divisible by the number of heads", (dim,), (num_heads,))
        self.dim = dim
        self.num_heads = num_heads
        self.head_dim = dim // num_heads
        self.q = self.child("q", Linear(dim, dim, rng))
        self.k = self.child("k", Linear(dim, dim, rng))
        self.v = self.child("v", Linear(dim, dim, rng))
        self.o = self.child("o", Linear(dim, dim, rng))

    def _head(self, h: int, ndim: int) -> Tuple[slice, ...]:
        return (slice(None),) * (ndim - 1) + (slice(h * self.head_dim, (h + 1) * self.head_dim),)

    def weights(self, x: TensorLike, mask: np.ndarray) -> List[Tensor]:
        """The attention weight matrix of each head"""
        x = as_tensor(x)
        q = self.q(x)
        k = self.k(x)
        scale = 1.0 / np.sqrt(self.head_dim)
        out = []
        for h in range(self.num_heads):
            cols = self._head(h, q.ndim)
            scores = mul(matmul(getitem(q, cols), transpose(getitem(k, cols))), scale)
            out.append(masked_softmax(scores, mask))
        return out

    def __call__(self, x: TensorLike, mask: np.ndarray) -> Tensor:
        """
        :param x: Tensor[.., L, D]
        :param mask: boolean, broadcastable to [.., L, L], true where a query may attend to a key
        """
        x = as_tensor(x)
        v = self.v(x)
        heads = []
        for h, p in enumerate(self.weights(x, mask)):
            cols = self._head(h, v.ndim)
            heads.append(matmul(p, getitem(v, cols)))
        return self.o(concat(heads, axis=-1))

    def step(self, row: TensorLike, keys: List[np.ndarray], values: List[np.ndarray]) -> Tensor:
        """Attend from one new final row to it and the rows whose projected keys and values are cached.

        The cache is extended in place, so each row is projected once however long the sequence grows.
        """
        row = as_tensor(row)
        keys.append(self.k(row).values)
        values.append(self.v(row).values)
        K, V = Tensor(np.concatenate(keys)), Tensor(np.concatenate(values))
        q = self.q(row)
        scale = 1.0 / np.sqrt(self.head_dim)
        visible = np.ones((1, K.shape[0]), dtype=bool)
        heads = []
        for h in range(self.num_heads):
            cols = self._head(h, 2)
            p = masked_softmax(mul(matmul(getitem(q, cols), transpose(getitem(K, cols))), scale), visible)
            heads.append(matmul(p, getitem(V, cols)))
        return self.o(concat(heads, axis=-1))

    def macs_per_frame(self, context: int = 1) -> int:
        # four projections, then scores and weighted values over the context
        return 4 * self.dim * self.dim + 2 * self.dim * context


class TransformerLayer(Module):
    """Post-norm self-attention then feed-forward, each with a residual connection"""

    def __init__(self, dim: int, num_heads: int, ff_dim: int, rng: np.random.Generator):
        super().__init__()
        self.attn = self.child("attn", MultiHeadSelfAttention(dim, num_heads, rng))
        self.ln1 = self.child("ln1", LayerNorm(dim))
        self.ff = self.child("ff", FeedForward(dim, ff_dim, rng))
        self.ln2 = self.child("ln2", LayerNorm(dim))

    def __call__(self, x: TensorLike, mask: np.ndarray) -> Tensor:
        x = as_tensor(x)
        h = self.ln1(add(x, self.attn(x, mask)))
        return self.ln2(add(h, self.ff(h)))

    def step(self, row: TensorLike, keys: List[np.ndarray], values: List[np.ndarray]) -> Tensor:
        """The output for one new row of a causal sequence.

        :param row: Tensor[1, D]
        :param keys: projected keys of the rows before it, extended in place with its own
        :param values: projected values, likewise
        """
        row = as_tensor(row)
        h = self.ln1(add(row, self.attn.step(row, keys, values)))
        return self.ln2(add(h, self.ff(h)))

    def macs_per_frame(self, context: int = 1) -> int:
        return self.attn.macs_per_frame(context) + self.ff.macs_per_frame()


class LSTMCell(Module):
    """A standard LSTM cell with input, forget, cell and output gates computed by one affine map"""

    def __init__(self, d_in: int, hidden: int, rng: np.random.Generator):
        super().__init__()
        self.d_in = d_in
        self.hidden = hidden
        self.gates = self.child("gates", Linear(d_in + hidden, 4 * hidden, rng))
        self.gates.bias.values[hidden:2 * hidden] = 1.0

    def __call__(self, x: TensorLike, h: TensorLike, c: TensorLike) -> Tuple[Tensor, Tensor]:
        z = self.gates(concat([as_tensor(x), as_tensor(h)], axis=-1))
        n = self.hidden
        i = sigmoid(getitem(z, slice(0, n)))
        f = sigmoid(getitem(z, slice(n, 2 * n)))
        g = tanh(getitem(z, slice(2 * n, 3 * n)))
        o = sigmoid(getitem(z, slice(3 * n, 4 * n)))
        c_next = add(mul(f, c), mul(i, g))
        return mul(o, tanh(c_next)), c_next
