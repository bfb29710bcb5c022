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

"""Dense double precision tensors with a reverse-mode tape.

Operations on tensors are recorded only while a ComputeGraph is active on the calling thread and at least one input
requires a gradient. Outside a graph the same operations simply compute values, which is how inference runs.

    >>> W = Tensor([[2.0, 3.0], [4.0, 5.0]], requires_grad=True)
    >>> with ComputeGraph() as graph:
    ...     loss = linear(Tensor([1.0, 0.0]), W).sum()
    ...     graph.backward(loss)
    >>> W.grad
    array([[1., 0.],
           [1., 0.]])
"""

import logging
import threading
from contextlib import contextmanager
from typing import Callable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from ..exceptions import ContractError, DimensionError

__all__ = ["Tensor", "ComputeGraph", "current_graph", "no_grad", "as_tensor", "backward", "TensorLike"]

logger = logging.getLogger(__name__)

TensorLike = Union["Tensor", np.ndarray, float, int, Sequence]

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

_local = threading.local()


def _graph_stack() -> List[Optional["ComputeGraph"]]:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = []
        _local.stack = stack
    return stack


def current_graph() -> Optional["ComputeGraph"]:
    """The innermost ComputeGraph active on this thread, if any"""
    stack = _graph_stack()
    return stack[-1] if stack else None


@contextmanager
def no_grad() -> Iterator[None]:
    """Suspend recording on this thread, even inside an active graph"""
    stack = _graph_stack()
    stack.append(None)
    try:
        yield
    finally:
        stack.pop()


class Tensor(object):
    """A dense row-major array of doubles with an optional gradient.

    :param values: anything numpy can turn into a float64 array; the data is copied
    :param requires_grad: whether backward should populate `grad` for this tensor
    :param name: an optional label used in error messages and checkpoints
    """

    __array_priority__ = 100

    def __init__(self, values: TensorLike, requires_grad: bool = False, name: Optional[str] = None):
        if isinstance(values, Tensor):
            values = values.values
        self.values: np.ndarray = np.array(values, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = np.zeros_like(self.values) if self.requires_grad else None
        self.name = name
        self._graph: Optional["ComputeGraph"] = None

    @classmethod
    def _wrap(cls, values: np.ndarray, requires_grad: bool) -> "Tensor":
        t = cls.__new__(cls)
        t.values = values
        t.requires_grad = requires_grad
        t.grad = None
        t.name = None
        t._graph = None
        return t

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(self.values.shape)

    @property
    def ndim(self) -> int:
        return self.values.ndim

    @property
    def size(self) -> int:
        return int(self.values.size)

    def item(self) -> float:
        if self.values.size != 1:
            raise ContractError("item() needs a single element tensor, got shape {}".format(self.shape))
        return float(self.values.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.values.copy()

    def detach(self) -> "Tensor":
        """A tensor sharing these values that no gradient flows through"""
        return Tensor._wrap(self.values, False)

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.values)

    def __len__(self) -> int:
        return self.shape[0]

    def __repr__(self) -> str:
        label = " name={!r}".format(self.name) if self.name else ""
        return "Tensor(shape={}{}, requires_grad={})".format(self.shape, label, self.requires_grad)

    # operator sugar; the implementations live in ops.py

    def __add__(self, other: TensorLike) -> "Tensor":
        from .ops import add
        return add(self, other)

    def __radd__(self, other: TensorLike) -> "Tensor":
        from .ops import add
        return add(other, self)

    def __sub__(self, other: TensorLike) -> "Tensor":
        from .ops import sub
        return sub(self, other)

    def __rsub__(self, other: TensorLike) -> "Tensor":
        from .ops import sub
        return sub(other, self)

    def __mul__(self, other: TensorLike) -> "Tensor":
        from .ops import mul
        return mul(self, other)

    def __rmul__(self, other: TensorLike) -> "Tensor":
        from .ops import mul
        return mul(other, self)

    def __neg__(self) -> "Tensor":
        from .ops import neg
        return neg(self)

    def __matmul__(self, other: TensorLike) -> "Tensor":
        from .ops import matmul
        return matmul(self, other)

    def __getitem__(self, index: object) -> "Tensor":
        from .ops import getitem
        return getitem(self, index)

    def sum(self, axis: Optional[int] = None) -> "Tensor":
        from .ops import reduce_sum
        return reduce_sum(self, axis)

    def mean(self, axis: Optional[int] = None) -> "Tensor":
        from .ops import reduce_mean
        return reduce_mean(self, axis)

    def reshape(self, *shape: int) -> "Tensor":
        from .ops import reshape
        return reshape(self, shape)

    @property
    def T(self) -> "Tensor":
        from .ops import transpose
        return transpose(self)


def as_tensor(v: TensorLike) -> Tensor:
    """Wrap constants as gradient-free tensors; tensors are returned unchanged"""
    if isinstance(v, Tensor):
        return v
    return Tensor(v)


class _Node(object):
    __slots__ = ("out", "inputs", "backward_fn", "op")

    def __init__(self, out: Tensor, inputs: Tuple[Tensor, ...], backward_fn: BackwardFn, op: str):
        self.out = out
        self.inputs = inputs
        self.backward_fn = backward_fn
        self.op = op


class ComputeGraph(object):
    """An ordered record of the operations performed while it is active.

    The topological order is the record order, so backward simply walks the record in reverse. A graph may be
    differentiated once; recording a new operation after that starts a fresh record.
    """

    def __init__(self) -> None:
        self._nodes: List[_Node] = []
        self._consumed = False

    def __enter__(self) -> "ComputeGraph":
        _graph_stack().append(self)
        return self

    def __exit__(self, *args: object) -> None:
        stack = _graph_stack()
        if not stack or stack[-1] is not self:
            raise ContractError("ComputeGraph exited out of order")
        stack.pop()

    def __len__(self) -> int:
        return len(self._nodes)

    @property
    def ops(self) -> List[str]:
        """The recorded operation names, in record order"""
        return [n.op for n in self._nodes]

    def record(self, out: Tensor, inputs: Tuple[Tensor, ...], backward_fn: BackwardFn, op: str) -> None:
        if self._consumed:
            self._nodes = []
            self._consumed = False
        out._graph = self
        self._nodes.append(_Node(out, inputs, backward_fn, op))

    def backward(self, loss: Tensor) -> None:
        """Populate `grad` on every tensor with requires_grad that the loss depends on.

        Leaf tensors accumulate into their existing gradient; recorded intermediates have theirs replaced.

        :raises ContractError: if the loss is not a scalar recorded in this graph, or the graph was already used
        """
        if loss.size != 1:
            raise ContractError("backward needs a scalar loss, got shape {}".format(loss.shape))
        if self._consumed:
            raise ContractError("backward has already been run on this graph; run a new forward first")
        if loss._graph is not self:
            raise ContractError("loss was not produced by operations recorded in this graph")

        produced = set(id(n.out) for n in self._nodes)
        grads = {id(loss): np.ones_like(loss.values)}
        leaves = {}

        for node in reversed(self._nodes):
            g = grads.pop(id(node.out), None)
            if g is None:
                node.out.grad = np.zeros_like(node.out.values)
                continue
            node.out.grad = g
            input_grads = node.backward_fn(g)
            for t, gi in zip(node.inputs, input_grads):
                if gi is None or not t.requires_grad:
                    continue
                key = id(t)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
                if key not in produced:
                    leaves[key] = t

        for key, t in leaves.items():
            g = grads.get(key)
            if g is None:
                continue
            if t.grad is None:
                t.grad = np.array(g, dtype=np.float64)
            else:
                t.grad = t.grad + g

        logger.debug("backward over %d recorded operations", len(self._nodes))
        self._consumed = True


def backward(loss: Tensor) -> None:
    """Run backward on the graph that recorded the loss"""
    if loss._graph is None:
        raise ContractError("loss was not produced by recorded operations")
    loss._graph.backward(loss)


def make_result(values: np.ndarray, inputs: Sequence[Tensor], backward_fn: BackwardFn, op: str) -> Tensor:
    """Create an operation result, recording it if a graph is active and any input needs a gradient"""
    graph = current_graph()
    needs_grad = graph is not None and any(t.requires_grad for t in inputs)
    out = Tensor._wrap(np.asarray(values, dtype=np.float64), needs_grad)
    if needs_grad:
        out.grad = np.zeros_like(out.values)
        graph.record(out, tuple(inputs), backward_fn, op)
    return out


def check_same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise DimensionError("{}: shapes differ".format(op), a.shape, b.shape)
