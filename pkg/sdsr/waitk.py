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

"""Wait-k autoregressive code decoder.

Row r (0-based) of a forward pass is the distribution over code r. It may see adaptor frames 0 .. r+k-1 and the
history codes 0 .. r-1 preceded by a reserved constant code. The decoder realises this with a single causal pass
over a fused sequence of T+k-1 positions: position p carries adaptor frame p (zeros past the end of the input), the
code p-k slot (the constant while p < k) and two position codes, and row r is read from position r+k-1.

An offset at or beyond the sequence length sees everything, so it is computed as k = T.
"""

import logging
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .config import WaitKConfig
from .exceptions import ContractError, DimensionError, IndexRangeError
from .layers import Linear, TransformerLayer, sinusoid, causal_mask
from .numerics import (Module, Tensor, TensorLike, as_tensor, concat, getitem, log_softmax, cross_entropy,
                       kl_divergence, mul, add, no_grad)
from .timing import FrameRange

__all__ = ["WaitKDecoder", "VisibilityMask", "WaitKLoss", "IncrementalWaitKDecoder", "IncrementalResult",
           "waitk_visibility", "forward_waitk", "forward_full", "loss_ce", "loss_kd", "loss_parts", "loss_total",
           "decode_incremental", "per_k_ce", "next_code_accuracy"]

logger = logging.getLogger(__name__)


class VisibilityMask(NamedTuple):
    """What each row may read.

    frames[r, s] is true when adaptor frame s is visible to row r. codes[r, j] is true when history slot j is; slot 0
    is the reserved constant and slot j > 0 holds code j-1.
    """
    k: int
    frames: np.ndarray
    codes: np.ndarray

    def frame_range(self, r: int) -> FrameRange:
        return FrameRange.from_start_length(0, int(self.frames[r].sum()))

    def code_range(self, r: int) -> FrameRange:
        return FrameRange.from_start_length(0, int(self.codes[r].sum()))


def waitk_visibility(T: int, k: int) -> VisibilityMask:
    if T < 1 or k < 1:
        raise ContractError("visibility needs T >= 1 and k >= 1, got T={} k={}".format(T, k))
    r = np.arange(T).reshape(-1, 1)
    s = np.arange(T).reshape(1, -1)
    return VisibilityMask(k, s < r + k, s <= r)


class WaitKDecoder(Module):
    def __init__(self, cfg: WaitKConfig, adaptor_dim: int, code_vocab: int, rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        self.adaptor_dim = adaptor_dim
        self.code_vocab = code_vocab
        self.code_embedding = self.param("code_embedding",
                                         rng.normal(0.0, 1.0, size=(code_vocab + 1, cfg.code_embed_dim)))
        self.fuse = self.child("fuse", Linear(adaptor_dim + cfg.code_embed_dim + 2 * cfg.pe_dim, cfg.model_dim, rng))
        self.layers = [self.child("layers.{}".format(i),
                                  TransformerLayer(cfg.model_dim, cfg.num_heads, cfg.ff_dim, rng))
                       for i in range(cfg.num_layers)]
        self.out = self.child("out", Linear(cfg.model_dim, code_vocab, rng))

    @property
    def constant_code(self) -> int:
        """The reserved history index standing in for codes before the first"""
        return self.code_vocab

    def check_codes(self, codes: Sequence[int]) -> np.ndarray:
        arr = np.asarray(codes, dtype=np.int64).reshape(-1)
        if np.any(arr < 0) or np.any(arr >= self.code_vocab):
            raise IndexRangeError("code index outside [0, {})".format(self.code_vocab))
        return arr

    def _fused(self, frame_part: TensorLike, ids: np.ndarray, p: np.ndarray, k: int) -> Tensor:
        pe = np.concatenate([sinusoid(p + 1, self.cfg.pe_dim), sinusoid(p + 2 - k, self.cfg.pe_dim)], axis=1)
        return self.fuse(concat([frame_part, getitem(self.code_embedding, ids), pe], axis=1))

    def history_id(self, codes: Sequence[int], k: int, p: int) -> int:
        """The history slot at position p: code p - k, or the constant before the first"""
        return int(codes[p - k]) if p >= k else self.constant_code

    def positions(self, frames: TensorLike, codes: Sequence[int], k: int, length: int) -> Tensor:
        """Logits at the first `length` positions of the fused sequence for offset k

        :param frames: the adaptor frames available, [n, D_apt]; positions past n see zeros
        :param codes: history codes; position p reads codes[p - k]
        """
        frames = as_tensor(frames)
        n = frames.shape[0]
        if frames.ndim != 2 or frames.shape[1] != self.adaptor_dim:
            raise DimensionError("adaptor frames do not match the decoder", frames.shape, (n, self.adaptor_dim))
        if length < n:
            frame_part = getitem(frames, slice(0, length))
        elif length > n:
            frame_part = concat([frames, np.zeros((length - n, self.adaptor_dim))], axis=0)
        else:
            frame_part = frames
        ids = np.array([self.history_id(codes, k, p) for p in range(length)], dtype=np.int64)
        h = self._fused(frame_part, ids, np.arange(length), k)
        mask = causal_mask(length)
        for layer in self.layers:
            h = layer(h, mask)
        return self.out(h)

    def position_step(self, frame: np.ndarray, code_id: int, p: int, k: int,
                      caches: Sequence[Tuple[List[np.ndarray], List[np.ndarray]]]) -> np.ndarray:
        """Logits at position p alone, given per-layer caches of the keys and values of positions 0 .. p-1.

        The caches are extended with position p.
        """
        with no_grad():
            h = self._fused(np.asarray(frame, dtype=np.float64).reshape(1, -1), np.array([code_id]),
                            np.array([p]), k)
            for layer, (keys, values) in zip(self.layers, caches):
                h = layer.step(h, keys, values)
            return self.out(h).values[0]

    def macs_per_frame(self, context: int = 1) -> int:
        """One fused position through every layer, its attention spanning `context` earlier positions"""
        return (self.fuse.macs_per_frame() + sum(layer.macs_per_frame(context) for layer in self.layers)
                + self.out.macs_per_frame())


def _check_inputs(model: WaitKDecoder, h_apt: TensorLike, codes: Sequence[int], k: int) -> Tensor:
    h_apt = as_tensor(h_apt)
    if h_apt.ndim != 2 or h_apt.shape[0] < 1:
        raise ContractError("adaptor frames must be a non-empty [T, D] sequence, got {}".format(h_apt.shape))
    if len(codes) != h_apt.shape[0]:
        raise ContractError("{} codes for {} adaptor frames".format(len(codes), h_apt.shape[0]))
    if k < 1:
        raise ContractError("wait-k offset must be at least 1, got {}".format(k))
    model.check_codes(codes)
    return h_apt


def forward_waitk(model: WaitKDecoder, h_apt: TensorLike, codes: Sequence[int], k: int) -> Tensor:
    """Log-distributions [T, V_code] under the wait-k visibility policy, history taken from `codes`

    :raises ContractError: if lengths differ or k < 1
    """
    h_apt = _check_inputs(model, h_apt, codes, k)
    T = h_apt.shape[0]
    k_eff = min(k, T)
    logits = model.positions(h_apt, [int(c) for c in codes], k_eff, T + k_eff - 1)
    return log_softmax(getitem(logits, slice(k_eff - 1, None)))


def forward_full(model: WaitKDecoder, h_apt: TensorLike, codes: Sequence[int]) -> Tensor:
    """Every row sees every adaptor frame"""
    return forward_waitk(model, h_apt, codes, as_tensor(h_apt).shape[0])


class _Views(object):
    """Forward passes of one call, shared between the losses by effective offset"""

    def __init__(self, model: WaitKDecoder, h_apt: Tensor, codes: Sequence[int]):
        self.model = model
        self.h_apt = h_apt
        self.codes = codes
        self._cache: Dict[int, Tensor] = {}

    def __getitem__(self, k: int) -> Tensor:
        k_eff = min(k, self.h_apt.shape[0])
        if k_eff not in self._cache:
            self._cache[k_eff] = forward_waitk(self.model, self.h_apt, self.codes, k_eff)
        return self._cache[k_eff]


def loss_ce(model: WaitKDecoder, h_apt: TensorLike, codes: Sequence[int], ks: Sequence[int],
            views: Optional[_Views] = None) -> Tensor:
    """Sum over k of the mean cross-entropy of each row against its code"""
    if not ks:
        raise ContractError("no wait-k offsets given")
    h_apt = _check_inputs(model, h_apt, codes, min(ks))
    views = views or _Views(model, h_apt, codes)
    total: Optional[Tensor] = None
    for k in ks:
        term = cross_entropy(views[k], list(codes))
        total = term if total is None else add(total, term)
    return total


def loss_kd(model: WaitKDecoder, h_apt: TensorLike, codes: Sequence[int], ks_student: Sequence[int],
            teacher_offset: int, views: Optional[_Views] = None) -> Tensor:
    """Sum over student offsets k of KL(view k || view k + teacher_offset), the teacher view detached"""
    h_apt = _check_inputs(model, h_apt, codes, 1)
    views = views or _Views(model, h_apt, codes)
    total: Tensor = Tensor(0.0)
    for k in ks_student:
        total = add(total, kl_divergence(views[k], views[k + teacher_offset], detach_target=True))
    return total


class WaitKLoss(NamedTuple):
    ce: Tensor
    kd: Tensor
    total: Tensor


def loss_parts(model: WaitKDecoder, h_apt: TensorLike, codes: Sequence[int],
               cfg: Optional[WaitKConfig] = None) -> WaitKLoss:
    """The multi-offset cross-entropy, the distillation term and (1 - alpha) * CE + alpha * KD"""
    cfg = cfg or model.cfg
    h_apt = _check_inputs(model, h_apt, codes, min(cfg.ks))
    views = _Views(model, h_apt, codes)
    ce = loss_ce(model, h_apt, codes, cfg.ks, views)
    kd = loss_kd(model, h_apt, codes, cfg.student_ks, cfg.teacher_offset, views)
    return WaitKLoss(ce, kd, add(mul(1.0 - cfg.alpha, ce), mul(cfg.alpha, kd)))


def loss_total(model: WaitKDecoder, h_apt: TensorLike, codes: Sequence[int],
               cfg: Optional[WaitKConfig] = None) -> Tensor:
    return loss_parts(model, h_apt, codes, cfg).total


class IncrementalWaitKDecoder(object):
    """Emits codes one at a time as adaptor frames arrive.

    Row r is decoded once frame r+k-1 has arrived, or at end of stream. Every fused position is run through the
    layers once, attending to the cached keys and values of the positions before it, with the previously emitted
    codes as history. With k None nothing is emitted before end of stream, which is the sentence-level behaviour.
    """

    def __init__(self, model: WaitKDecoder, k: Optional[int]):
        if k is not None and k < 1:
            raise ContractError("wait-k offset must be at least 1, got {}".format(k))
        self.model = model
        self.k = k
        self.frames: List[np.ndarray] = []
        self.codes: List[int] = []
        self.finished = False
        self._caches: List[Tuple[List[np.ndarray], List[np.ndarray]]] = [([], []) for _ in model.layers]
        self._positions = 0
        self._run_k: Optional[int] = None

    def push(self, h_apt_t: np.ndarray) -> None:
        if self.finished:
            raise ContractError("adaptor frame pushed after end of stream")
        self.frames.append(np.asarray(h_apt_t, dtype=np.float64))

    def finish(self) -> None:
        self.finished = True

    def _offset(self) -> int:
        T = len(self.frames)
        if self.finished:
            return T if self.k is None else min(self.k, T)
        if self.k is None:
            raise ContractError("a sentence-level decoder has no offset before end of stream")
        return self.k

    def ready(self) -> bool:
        r = len(self.codes)
        if self.finished:
            return r < len(self.frames)
        return self.k is not None and r + self.k - 1 < len(self.frames)

    @property
    def frames_needed(self) -> Optional[int]:
        """How many frames must have arrived before the next row can be decoded mid-stream"""
        return None if self.k is None else len(self.codes) + self.k

    @property
    def positions_computed(self) -> int:
        return self._positions

    def emit_next(self) -> int:
        if not self.ready():
            raise ContractError("row {} is not yet visible".format(len(self.codes)))
        r = len(self.codes)
        k = self._offset()
        if self._run_k is None:
            self._run_k = k
        elif self._run_k != k:
            raise ContractError("offset changed from {} to {} after decoding began".format(self._run_k, k))
        zeros = np.zeros(self.model.adaptor_dim)
        logits = None
        while self._positions <= r + k - 1:
            p = self._positions
            frame = self.frames[p] if p < len(self.frames) else zeros
            logits = self.model.position_step(frame, self.model.history_id(self.codes, k, p), p, k, self._caches)
            self._positions += 1
        code = int(np.argmax(logits))
        self.codes.append(code)
        return code

    def drain(self) -> List[int]:
        out = []
        while self.ready():
            out.append(self.emit_next())
        return out


class IncrementalResult(NamedTuple):
    """Emitted codes and, for each, how many adaptor frames had arrived when it was emitted"""
    codes: List[int]
    frames_seen: List[int]


def decode_incremental(model: WaitKDecoder, frames: Sequence[np.ndarray], k: Optional[int]) -> IncrementalResult:
    dec = IncrementalWaitKDecoder(model, k)
    codes: List[int] = []
    seen: List[int] = []
    for f in frames:
        dec.push(f)
        for c in dec.drain():
            codes.append(c)
            seen.append(len(dec.frames))
    dec.finish()
    for c in dec.drain():
        codes.append(c)
        seen.append(len(dec.frames))
    return IncrementalResult(codes, seen)


def per_k_ce(model: WaitKDecoder, h_apt: TensorLike, codes: Sequence[int], ks: Sequence[int]) -> Dict[int, float]:
    """Teacher-forced cross-entropy of each view, evaluated without recording"""
    return {k: cross_entropy(forward_waitk(model, as_tensor(h_apt).detach(), codes, k), list(codes)).item()
            for k in ks}


def next_code_accuracy(model: WaitKDecoder, h_apt: TensorLike, codes: Sequence[int], k: int) -> float:
    """Fraction of rows whose most likely code is the reference, with the reference as history"""
    lp = forward_waitk(model, as_tensor(h_apt).detach(), codes, k)
    return float(np.mean(np.argmax(lp.values, axis=-1) == np.asarray(codes)))
