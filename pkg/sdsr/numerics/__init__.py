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

"""Double precision tensors with reverse-mode differentiation, parameter stores and the binary container."""

from .tensor import Tensor, TensorLike, ComputeGraph, current_graph, no_grad, as_tensor, backward
from .ops import (add, sub, mul, neg, matmul, linear, tanh, sigmoid, relu, swish, exp, log,
                  reduce_sum, reduce_mean, reshape, transpose, concat, stack, getitem,
                  log_softmax, softmax, softmax_logsoftmax, masked_softmax, layer_norm,
                  kl_divergence, cross_entropy)
from .module import Module, ParameterSet, init_weight
from .gradcheck import finite_diff_check
from .checkpoint import dumps_tensors, loads_tensors, save_tensors, load_tensors

__all__ = ["Tensor", "TensorLike", "ComputeGraph", "current_graph", "no_grad", "as_tensor", "backward",
           "add", "sub", "mul", "neg", "matmul", "linear", "tanh", "sigmoid", "relu", "swish", "exp", "log",
           "reduce_sum", "reduce_mean", "reshape", "transpose", "concat", "stack", "getitem",
           "log_softmax", "softmax", "softmax_logsoftmax", "masked_softmax", "layer_norm",
           "kl_divergence", "cross_entropy",
           "Module", "ParameterSet", "init_weight",
           "finite_diff_check",
           "dumps_tensors", "loads_tensors", "save_tensors", "load_tensors"]
