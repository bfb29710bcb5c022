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

import logging
from typing import Callable, Iterable, Optional, Union

import numpy as np

from ..constants import FINITE_DIFF_STEP
from .module import ParameterSet
from .tensor import ComputeGraph, Tensor

__all__ = ["finite_diff_check"]

logger = logging.getLogger(__name__)


def finite_diff_check(f: Callable[[], Tensor],
                      params: Union[ParameterSet, Iterable[Tensor]],
                      step: float = FINITE_DIFF_STEP,
                      max_coords: Optional[int] = 20,
                      seed: int = 0,
                      floor: float = 1e-8) -> float:
    """Compare the recorded gradient of a scalar function with central finite differences.

    :param f: computes the scalar from the current parameter values; it must be deterministic
    :param params: the tensors to check; their values are perturbed in place and restored
    :param step: the central difference step
    :param max_coords: coordinates sampled per tensor, or None to check every coordinate
    :param seed: seeds the coordinate sampling
    :param floor: lower bound on the relative error denominator
    :returns: the largest |analytic - numeric| / max(|analytic|, |numeric|, floor) over the checked coordinates
    """
    tensors = [t for _, t in params.items()] if isinstance(params, ParameterSet) else list(params)
    for t in tensors:
        t.zero_grad()
    with ComputeGraph() as graph:
        loss = f()
        graph.backward(loss)
    analytic = [np.array(t.grad) for t in tensors]

    rng = np.random.default_rng(seed)
    worst = 0.0
    for t, grad in zip(tensors, analytic):
        flat = t.values.reshape(-1)
        if max_coords is None or flat.size <= max_coords:
            coords = np.arange(flat.size)
        else:
            coords = rng.choice(flat.size, size=max_coords, replace=False)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + step
            up = f().item()
            flat[i] = orig - step
            down = f().item()
            flat[i] = orig
            numeric = (up - down) / (2.0 * step)
            a = float(grad.reshape(-1)[i])
            err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
            worst = max(worst, err)

    logger.debug("finite difference check over %d tensors: max relative error %g", len(tensors), worst)
    return worst
