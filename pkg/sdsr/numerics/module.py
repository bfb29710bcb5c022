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

from collections import OrderedDict
from typing import AbstractSet, Dict, Iterable, Iterator, Mapping, Optional, Tuple

import numpy as np

from ..exceptions import CheckpointError, DimensionError, NumericError
from .tensor import Tensor

__all__ = ["Module", "ParameterSet", "init_weight"]


def init_weight(rng: np.random.Generator, d_out: int, d_in: int) -> np.ndarray:
    """Gaussian initialisation scaled by the fan-in"""
    return rng.normal(0.0, 1.0 / np.sqrt(d_in), size=(d_out, d_in))


class ParameterSet(object):
    """An ordered mapping from dotted parameter names to the Tensors holding them"""

    def __init__(self, params: Optional[Iterable[Tuple[str, Tensor]]] = None):
        self._params: "OrderedDict[str, Tensor]" = OrderedDict(params or ())

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: object) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self) -> Iterator[Tuple[str, Tensor]]:
        return iter(self._params.items())

    def names(self) -> Tuple[str, ...]:
        return tuple(self._params)

    def count(self) -> int:
        """Total number of scalar parameters"""
        return sum(t.size for t in self._params.values())

    def select(self, prefix: str) -> "ParameterSet":
        return ParameterSet((n, t) for n, t in self._params.items() if n.startswith(prefix))

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.zero_grad()

    def state(self) -> Dict[str, np.ndarray]:
        """Copies of every parameter's values"""
        return OrderedDict((n, t.values.copy()) for n, t in self._params.items())

    def load_state(self, state: Mapping[str, np.ndarray], strict: bool = True) -> None:
        """Overwrite parameter values by name

        :raises CheckpointError: if strict and the names differ
        :raises DimensionError: if a stored shape does not match
        """
        if strict and set(state) != set(self._params):
            missing = sorted(set(self._params) - set(state))
            extra = sorted(set(state) - set(self._params))
            raise CheckpointError("Parameter names differ: missing {}, unexpected {}".format(missing, extra))
        for name, values in state.items():
            if name not in self._params:
                continue
            t = self._params[name]
            values = np.asarray(values, dtype=np.float64)
            if values.shape != t.shape:
                raise DimensionError("Stored parameter {!r} has the wrong shape".format(name), values.shape, t.shape)
            t.values[...] = values

    def sgd_step(self, lr: float, frozen: AbstractSet[str] = frozenset(), clip_norm: Optional[float] = None) -> None:
        """Plain gradient descent on every parameter whose name is not frozen

        Frozen parameters are not touched at all, so their values stay bit-identical.

        :param clip_norm: if given, scale the joint gradient of the trainable parameters down to at most this norm
        :raises NumericError: if a gradient is not finite
        """
        trainable = [(n, t) for n, t in self._params.items() if n not in frozen and t.grad is not None]
        for n, t in trainable:
            if not np.all(np.isfinite(t.grad)):
                raise NumericError("Gradient of {!r} is not finite".format(n))
        scale = 1.0
        if clip_norm is not None:
            norm = float(np.sqrt(sum(float((t.grad * t.grad).sum()) for _, t in trainable)))
            if norm > clip_norm:
                scale = clip_norm / norm
        for _, t in trainable:
            t.values -= (lr * scale) * t.grad


class Module(object):
    """Base class of everything holding trainable parameters.

    Parameters and child modules are registered by name, so every parameter has a stable dotted name such as
    "encoder.layers.0.attn.q.weight" that checkpoints and freeze sets refer to.
    """

    def __init__(self) -> None:
        self._params: "OrderedDict[str, Tensor]" = OrderedDict()
        self._children: "OrderedDict[str, Module]" = OrderedDict()

    def param(self, name: str, values: np.ndarray) -> Tensor:
        t = Tensor(values, requires_grad=True, name=name)
        self._params[name] = t
        return t

    def child(self, name: str, module: "Module") -> "Module":
        self._children[name] = module
        return module

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Tensor]]:
        for name, t in self._params.items():
            yield prefix + name, t
        for name, m in self._children.items():
            yield from m.named_parameters(prefix + name + ".")

    def parameters(self, prefix: str = "") -> ParameterSet:
        return ParameterSet(self.named_parameters(prefix))

    def num_parameters(self) -> int:
        return self.parameters().count()

    def zero_grad(self) -> None:
        self.parameters().zero_grad()

    def state(self) -> Dict[str, np.ndarray]:
        return self.parameters().state()

    def load_state(self, state: Mapping[str, np.ndarray], strict: bool = True) -> None:
        self.parameters().load_state(state, strict)

    def macs_per_frame(self) -> int:
        """Multiply-accumulate operations needed for one streaming frame; modules override this"""
        return sum(m.macs_per_frame() for m in self._children.values())


def check_finite_parameters(params: ParameterSet) -> None:
    for name, t in params.items():
        if not np.all(np.isfinite(t.values)):
            raise NumericError("Parameter {!r} is not finite".format(name))
