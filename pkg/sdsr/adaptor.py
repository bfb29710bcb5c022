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

"""The frame-level adaptor between the recognizer and the code decoder.

For each encoder frame t the explicit branch selects a pre-softmax joint vector according to the greedy decision at
t: the vector at (t+1, u) after a blank, (t+1, u+1) after an emission, with t+1 clamped to the last frame. The
implicit branch projects the encoder output and passes it through a switch gated linear unit. The two are mixed by a
trainable weight lambda = sigmoid(lambda_logit), which starts at one half.

Every output has exactly one row per encoder frame.
"""

import logging
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .config import AdaptorConfig, AdaptorMode
from .exceptions import DimensionError
from .layers import Linear
from .numerics import Module, Tensor, TensorLike, as_tensor, init_weight, linear, sigmoid, mul, add, sub, getitem
from .numerics.tensor import check_same_shape
from .transducer import AlignmentEntry, DecodeState, JointLattice, Transducer, check_alignment

__all__ = ["AdaptorFrame", "AdaptorOutput", "Adaptor", "StreamingAdaptor",
           "frame_align", "project_implicit", "switch_glu", "fuse", "lambda_of"]

logger = logging.getLogger(__name__)


class AdaptorFrame(NamedTuple):
    t: int
    h_exp: np.ndarray
    h_imp_gated: np.ndarray
    h_apt: np.ndarray


class AdaptorOutput(NamedTuple):
    h_exp: Tensor
    h_imp_gated: Tensor
    h_apt: Tensor

    def frames(self) -> Sequence[AdaptorFrame]:
        return [AdaptorFrame(t, self.h_exp.values[t], self.h_imp_gated.values[t], self.h_apt.values[t])
                for t in range(self.h_apt.shape[0])]


def frame_align(lat: JointLattice, path: Sequence[AlignmentEntry], W_exp: Tensor) -> Tensor:
    """Explicit semantic vectors, [T, D_apt], selected from the lattice by the alignment path

    :raises ContractError: if the path does not fit the lattice
    """
    check_alignment(path, lat.T, lat.U)
    rows = np.array([min(e.frame + 1, lat.T - 1) for e in path], dtype=np.int64)
    cols = np.array([e.u_after for e in path], dtype=np.int64)
    return linear(getitem(lat.logits, (rows, cols)), W_exp)


def project_implicit(h_enc: TensorLike, W_imp: Tensor, b_imp: Optional[Tensor]) -> Tensor:
    return linear(h_enc, W_imp, b_imp)


def switch_glu(h_imp: TensorLike, W_g: Tensor, b_g: Tensor, W_v: Tensor, b_v: Tensor) -> Tensor:
    """sigmoid(W_g.h + b_g) * (W_v.h + b_v): a per-coordinate gate in (0, 1) on a linear value branch"""
    return mul(sigmoid(linear(h_imp, W_g, b_g)), linear(h_imp, W_v, b_v))


def lambda_of(lambda_logit: TensorLike) -> Tensor:
    return sigmoid(lambda_logit)


def fuse(h_exp: TensorLike, h_gated: TensorLike, lambda_logit: TensorLike) -> Tensor:
    """lambda * h_exp + (1 - lambda) * h_gated with lambda = sigmoid(lambda_logit)

    :raises DimensionError: if the two branches differ in shape
    """
    h_exp, h_gated = as_tensor(h_exp), as_tensor(h_gated)
    check_same_shape("fuse", h_exp, h_gated)
    lam = lambda_of(lambda_logit)
    return add(mul(lam, h_exp), mul(sub(1.0, lam), h_gated))


class Adaptor(Module):
    """
    :param cfg: dimensions and fusion mode
    :param joint_dim: size of the pre-softmax joint vectors (the recognizer vocabulary)
    :param encoder_dim: size of the encoder outputs
    """

    def __init__(self, cfg: AdaptorConfig, joint_dim: int, encoder_dim: int, rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        self.joint_dim = joint_dim
        self.encoder_dim = encoder_dim
        self.W_exp = self.param("W_exp", init_weight(rng, cfg.adaptor_dim, joint_dim))
        self.implicit = self.child("implicit", Linear(encoder_dim, cfg.gate_dim, rng))
        self.gate = self.child("gate", Linear(cfg.gate_dim, cfg.adaptor_dim, rng))
        self.value = self.child("value", Linear(cfg.gate_dim, cfg.adaptor_dim, rng))
        self.lambda_logit = self.param("lambda_logit", np.array(cfg.lambda_init_logit))

    @property
    def mode(self) -> str:
        return self.cfg.mode

    @property
    def lam(self) -> float:
        """The mixing weight actually applied"""
        if self.mode == AdaptorMode.EXPLICIT:
            return 1.0
        if self.mode == AdaptorMode.IMPLICIT:
            return 0.0
        return float(lambda_of(self.lambda_logit.values).values)

    def gated(self, h_enc: TensorLike) -> Tensor:
        h_imp = project_implicit(h_enc, self.implicit.weight, self.implicit.bias)
        if self.mode == AdaptorMode.FUSION:
            return self.value(h_imp)
        return switch_glu(h_imp, self.gate.weight, self.gate.bias, self.value.weight, self.value.bias)

    def _mix(self, h_exp: Tensor, h_gated: Tensor) -> Tensor:
        if self.mode == AdaptorMode.EXPLICIT:
            return h_exp
        if self.mode == AdaptorMode.IMPLICIT:
            return h_gated
        return fuse(h_exp, h_gated, self.lambda_logit)

    def __call__(self, lat: JointLattice, path: Sequence[AlignmentEntry], h_enc: TensorLike) -> AdaptorOutput:
        """Adapt a whole utterance

        :param lat: the lattice over the hypothesis the path was decoded with
        :param path: one alignment entry per frame
        :param h_enc: the encoder outputs the lattice was built from
        """
        h_enc = as_tensor(h_enc)
        if h_enc.shape[0] != lat.T:
            raise DimensionError("encoder outputs and lattice differ in frame count", h_enc.shape, lat.logits.shape)
        h_exp = frame_align(lat, path, self.W_exp)
        h_gated = self.gated(h_enc)
        return AdaptorOutput(h_exp, h_gated, self._mix(h_exp, h_gated))

    def frame(self, t: int, joint_vector: np.ndarray, h_enc_t: np.ndarray) -> AdaptorFrame:
        """Adapt one frame from its selected joint vector and its encoder output"""
        h_exp = linear(joint_vector, self.W_exp)
        h_gated = self.gated(h_enc_t)
        return AdaptorFrame(t, h_exp.values, h_gated.values, self._mix(h_exp, h_gated).values)

    def macs_per_frame(self) -> int:
        d_apt, d_gate = self.cfg.adaptor_dim, self.cfg.gate_dim
        return d_apt * self.joint_dim + d_gate * self.encoder_dim + 2 * d_gate * d_apt


class StreamingAdaptor(object):
    """Releases adaptor frame t once the recognizer has processed frame t+1; the last frame is released by flush.

    The joint vector frame t needs is the one the recognizer scored at frame t+1 before deciding, since the label
    position in force there is the one left by frame t's decision.
    """

    def __init__(self, adaptor: Adaptor):
        self.adaptor = adaptor
        self._pending: Optional[np.ndarray] = None
        self._t = 0

    @property
    def buffered(self) -> int:
        return 0 if self._pending is None else 1

    def push(self, state: DecodeState) -> Optional[AdaptorFrame]:
        """Offer the decoder state after a frame; returns the previous frame's adaptor output, if any"""
        out = None
        if self._pending is not None:
            out = self.adaptor.frame(self._t, state.last_joint, self._pending)
            self._t += 1
        self._pending = state.last_h_enc
        return out

    def flush(self, transducer: Transducer, state: DecodeState) -> Optional[AdaptorFrame]:
        if self._pending is None:
            return None
        out = self.adaptor.frame(self._t, transducer.closing_joint(state), self._pending)
        self._pending = None
        self._t += 1
        return out
