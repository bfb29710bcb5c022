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

"""The streaming transducer recognizer.

The encoder is a stack of masked self-attention layers. Output t is computed from the window of input frames
t - left_context through t + right_context alone: every layer is re-run over that window, so the receptive field
does not grow with depth and output t is bit-identical whatever happens to frames outside it.

The label predictor is an LSTM over the emitted tokens, started from the embedding of the blank symbol, and the joint
network combines one encoder frame with one predictor state into pre-softmax scores over the vocabulary.

Frame indices in this module are 0-based.
"""

import logging
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .config import EncoderConfig, PredictorConfig, JointConfig
from .constants import BLANK_ID
from .exceptions import ContractError, DimensionError, IndexRangeError
from .layers import Linear, TransformerLayer, LSTMCell, sinusoid, band_mask
from .numerics import (Module, Tensor, TensorLike, as_tensor, add, reshape, tanh, getitem, stack, log_softmax,
                       no_grad, reduce_mean)
from .numerics.tensor import make_result

__all__ = ["Encoder", "EncoderState", "Predictor", "PredictorState", "Joint", "JointLattice",
           "AlignmentEntry", "AlignmentPath", "DecodeState", "Transducer",
           "transducer_loss", "batch_transducer_loss", "greedy_align", "check_alignment"]

logger = logging.getLogger(__name__)


def _frames(x: TensorLike, feature_dim: int) -> Tensor:
    x = as_tensor(x)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ContractError("encoder input must be a non-empty [T, {}] frame sequence, got {}".format(
            feature_dim, x.shape))
    if x.shape[1] != feature_dim:
        raise DimensionError("frame dimension does not match the encoder", x.shape, (x.shape[0], feature_dim))
    return x


def check_tokens(y: Sequence[int], vocab_size: int) -> Tuple[int, ...]:
    """Validate a target token sequence

    :raises ContractError: if the blank id appears
    :raises IndexRangeError: if an id lies outside the vocabulary
    """
    y = tuple(int(v) for v in y)
    for v in y:
        if v == BLANK_ID:
            raise ContractError("the blank id {} may not appear in a token sequence".format(BLANK_ID))
        if v < 0 or v >= vocab_size:
            raise IndexRangeError("token id {} outside [0, {})".format(v, vocab_size))
    return y


class EncoderState(NamedTuple):
    """Streaming encoder cache: the embedded inputs of at most left_context previous frames"""
    frames_seen: int
    window: Tuple[np.ndarray, ...]


class Encoder(Module):
    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        self.input = self.child("input", Linear(cfg.feature_dim, cfg.model_dim, rng))
        self.layers = [self.child("layers.{}".format(i),
                                  TransformerLayer(cfg.model_dim, cfg.num_heads, cfg.ff_dim, rng))
                       for i in range(cfg.num_layers)]

    def _embed(self, x: TensorLike, first_position: int) -> Tensor:
        x = as_tensor(x)
        positions = np.arange(first_position, first_position + x.shape[0])
        return add(self.input(x), sinusoid(positions, self.cfg.model_dim))

    def _windows(self, n: int, outputs: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray, int]:
        """Gather indices, validity and attention masks of the windows of the given output frames.

        Window b holds frames outputs[b] - lo .. outputs[b] + hi of an n frame input; rows outside the input are
        invalid, see only themselves and are never seen by a valid row. Row lo is the output frame itself.
        """
        lo = min(self.cfg.left_context, n - 1)
        hi = min(self.cfg.right_context, n - 1)
        idx = outputs.reshape(-1, 1) - lo + np.arange(lo + 1 + hi).reshape(1, -1)
        valid = (idx >= 0) & (idx < n)
        band = band_mask(lo + 1 + hi, self.cfg.left_context, self.cfg.right_context)
        mask = band[np.newaxis] & valid[:, np.newaxis, :]
        mask |= np.eye(lo + 1 + hi, dtype=bool)[np.newaxis] & ~valid[:, :, np.newaxis]
        return np.clip(idx, 0, n - 1), valid, mask, lo

    def _run_windows(self, h: Tensor, outputs: np.ndarray,
                     depth: Optional[int] = None) -> Tuple[Tensor, np.ndarray, np.ndarray, np.ndarray, int]:
        idx, valid, mask, lo = self._windows(h.shape[0], outputs)
        w = getitem(h, idx)
        for layer in self.layers[:depth]:
            w = layer(w, mask)
        return w, idx, valid, mask, lo

    def encode(self, x: TensorLike) -> Tensor:
        """Encode a whole utterance at once, [T, F] -> [T, D].

        Every layer of output t is recomputed over frames t - left_context .. t + right_context alone, so output t
        does not depend on any frame outside that window, however many layers there are.

        :raises ContractError: if the sequence is empty
        """
        x = _frames(x, self.cfg.feature_dim)
        T = x.shape[0]
        w, _, _, _, lo = self._run_windows(self._embed(x, 0), np.arange(T))
        return getitem(w, (np.arange(T), lo))

    def attention_weights(self, x: TensorLike, layer: int = 0) -> List[np.ndarray]:
        """Per-head [T, T] attention weights of each output frame's own row in one layer, for inspection"""
        x = _frames(x, self.cfg.feature_dim)
        T = x.shape[0]
        with no_grad():
            w, idx, valid, mask, lo = self._run_windows(self._embed(x, 0), np.arange(T), layer)
            heads = self.layers[layer].attn.weights(w, mask)
        out = []
        for p in heads:
            full = np.zeros((T, T))
            rows = np.repeat(np.arange(T), idx.shape[1])
            full[rows[valid.ravel()], idx[valid]] = p.values[:, lo, :][valid]
            out.append(full)
        return out

    def start(self) -> EncoderState:
        if not self.cfg.streaming:
            raise ContractError("streaming encoding needs right_context == 0, got {}".format(self.cfg.right_context))
        return EncoderState(0, ())

    def step(self, frame: TensorLike, state: EncoderState) -> Tuple[np.ndarray, EncoderState]:
        """Encode one more frame from the cached embeddings of at most left_context predecessors"""
        frame = as_tensor(frame)
        if frame.shape != (self.cfg.feature_dim,):
            raise DimensionError("frame dimension does not match the encoder", frame.shape, (self.cfg.feature_dim,))
        left = self.cfg.left_context
        with no_grad():
            e = self._embed(reshape(frame, (1, -1)), state.frames_seen).values[0]
            window = state.window + (e,)
            n = len(window)
            w, _, _, _, lo = self._run_windows(Tensor(np.stack(window)), np.array([n - 1]))
        cache = window[len(window) - left:] if left > 0 else ()
        return w.values[0, lo], EncoderState(state.frames_seen + 1, cache)

    def macs_per_frame(self) -> int:
        """Every layer runs over the whole window of each new frame"""
        context = self.cfg.left_context + self.cfg.right_context + 1
        return self.input.macs_per_frame() + sum(context * layer.macs_per_frame(context) for layer in self.layers)


class PredictorState(NamedTuple):
    h: np.ndarray
    c: np.ndarray


class Predictor(Module):
    """Label-history network. Output row u summarises the tokens y_1..y_u; row 0 is the start state."""

    def __init__(self, cfg: PredictorConfig, rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        self.embedding = self.param("embedding", rng.normal(0.0, 1.0, size=(cfg.vocab_size, cfg.embed_dim)))
        self.cell = self.child("cell", LSTMCell(cfg.embed_dim, cfg.hidden_dim, rng))

    def predict(self, y: Sequence[int]) -> Tensor:
        """[U] tokens -> [U + 1, H] predictor outputs"""
        y = check_tokens(y, self.cfg.vocab_size)
        h: TensorLike = np.zeros(self.cfg.hidden_dim)
        c: TensorLike = np.zeros(self.cfg.hidden_dim)
        outs = []
        for token in (BLANK_ID,) + y:
            h, c = self.cell(getitem(self.embedding, token), h, c)
            outs.append(h)
        return stack(outs)

    def start(self) -> PredictorState:
        return self.advance(PredictorState(np.zeros(self.cfg.hidden_dim), np.zeros(self.cfg.hidden_dim)), BLANK_ID)

    def advance(self, state: PredictorState, token: int) -> PredictorState:
        if token < 0 or token >= self.cfg.vocab_size:
            raise IndexRangeError("token id {} outside [0, {})".format(token, self.cfg.vocab_size))
        h, c = self.cell(self.embedding.values[token], state.h, state.c)
        return PredictorState(h.values, c.values)

    def macs_per_frame(self) -> int:
        return self.cell.macs_per_frame()


class JointLattice(object):
    """The T x (U+1) x V grid of joint scores with its row-normalised log-probabilities.

    `logits` keeps the pre-softmax joint vectors, which the adaptor consumes.
    """

    def __init__(self, logits: Tensor, log_probs: Optional[Tensor] = None,
                 h_enc: Optional[Tensor] = None, h_dec: Optional[Tensor] = None):
        if logits.ndim != 3:
            raise DimensionError("a joint lattice is three dimensional", logits.shape)
        self.logits = logits
        self.log_probs = log_probs if log_probs is not None else log_softmax(logits)
        self.h_enc = h_enc
        self.h_dec = h_dec

    @classmethod
    def from_log_probs(cls, log_probs: TensorLike) -> "JointLattice":
        """Wrap an explicit lattice, treating the scores as their own logits"""
        lp = as_tensor(log_probs)
        return cls(lp, log_softmax(lp))

    @property
    def T(self) -> int:
        return self.logits.shape[0]

    @property
    def U(self) -> int:
        return self.logits.shape[1] - 1

    @property
    def V(self) -> int:
        return self.logits.shape[2]


class Joint(Module):
    """joint(h_enc, h_dec) = FC(tanh(A.h_enc + B.h_dec))"""

    def __init__(self, encoder_dim: int, predictor_dim: int, cfg: JointConfig, vocab_size: int,
                 rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        self.enc_proj = self.child("enc_proj", Linear(encoder_dim, cfg.joint_dim, rng))
        self.dec_proj = self.child("dec_proj", Linear(predictor_dim, cfg.joint_dim, rng, bias=False))
        self.out = self.child("out", Linear(cfg.joint_dim, vocab_size, rng))

    def __call__(self, h_enc: Tensor, h_dec: Tensor) -> JointLattice:
        if h_enc.ndim != 2 or h_dec.ndim != 2:
            raise DimensionError("joint needs [T, D] encoder and [U+1, H] predictor outputs", h_enc.shape, h_dec.shape)
        t, u1, j = h_enc.shape[0], h_dec.shape[0], self.cfg.joint_dim
        a = reshape(self.enc_proj(h_enc), (t, 1, j))
        b = reshape(self.dec_proj(h_dec), (1, u1, j))
        return JointLattice(self.out(tanh(add(a, b))), h_enc=h_enc, h_dec=h_dec)

    def row(self, h_enc_t: np.ndarray, h_dec_u: np.ndarray) -> np.ndarray:
        """The pre-softmax joint vector for one (frame, label position) pair"""
        return self.out(tanh(add(self.enc_proj(h_enc_t), self.dec_proj(h_dec_u)))).values

    def macs_per_frame(self) -> int:
        return self.enc_proj.macs_per_frame() + self.dec_proj.macs_per_frame() + self.out.macs_per_frame()


def _logaddexp(a: float, b: float) -> float:
    return float(np.logaddexp(a, b))


def transducer_loss(lat: JointLattice, y: Sequence[int]) -> Tensor:
    """-log of the total probability of every monotone blank/emit path through the lattice.

    Paths start at (0, 0), end with a blank from (T-1, U), and may emit any number of tokens at one frame. The
    forward and backward variables are computed in log space and the gradient with respect to the log-probability
    lattice is the usual occupation-count expression.

    :raises DimensionError: if the lattice does not have U + 1 label positions
    """
    y = check_tokens(y, lat.V)
    T, U = lat.T, len(y)
    if lat.U != U:
        raise DimensionError("lattice label positions do not match the targets", lat.log_probs.shape, (T, U + 1))

    lp = lat.log_probs.values
    blank = lp[:, :, BLANK_ID]
    emit = lp[:, np.arange(U), list(y)] if U else np.zeros((T, 0))

    alpha = np.full((T, U + 1), -np.inf)
    alpha[0, 0] = 0.0
    for t in range(T):
        for u in range(U + 1):
            if t == 0 and u == 0:
                continue
            a = -np.inf
            if t > 0:
                a = alpha[t - 1, u] + blank[t - 1, u]
            if u > 0:
                a = _logaddexp(a, alpha[t, u - 1] + emit[t, u - 1])
            alpha[t, u] = a
    log_z = alpha[T - 1, U] + blank[T - 1, U]

    beta = np.full((T, U + 1), -np.inf)
    beta[T - 1, U] = blank[T - 1, U]
    for t in range(T - 1, -1, -1):
        for u in range(U, -1, -1):
            if t == T - 1 and u == U:
                continue
            b = -np.inf
            if t < T - 1:
                b = beta[t + 1, u] + blank[t, u]
            if u < U:
                b = _logaddexp(b, beta[t, u + 1] + emit[t, u])
            beta[t, u] = b

    grad = np.zeros_like(lp)
    g_blank = np.zeros((T, U + 1))
    g_blank[:T - 1, :] = -np.exp(alpha[:T - 1, :] + blank[:T - 1, :] + beta[1:, :] - log_z)
    g_blank[T - 1, U] = -np.exp(alpha[T - 1, U] + blank[T - 1, U] - log_z)
    grad[:, :, BLANK_ID] = g_blank
    if U:
        g_emit = -np.exp(alpha[:, :U] + emit + beta[:, 1:] - log_z)
        grad[:, np.arange(U), list(y)] += g_emit

    return make_result(np.array(-log_z), (lat.log_probs,), lambda g: (g * grad,), "transducer_loss")


def batch_transducer_loss(losses: Sequence[Tensor]) -> Tensor:
    """Per-utterance losses are sums over the utterance; a batch takes their mean"""
    if not losses:
        raise ContractError("empty batch")
    return reduce_mean(stack(losses))


class AlignmentEntry(NamedTuple):
    """One frame of a greedy alignment: the decision taken and the label position in force before it"""
    frame: int
    token: int
    u: int

    @property
    def emitted(self) -> bool:
        return self.token != BLANK_ID

    @property
    def u_after(self) -> int:
        return self.u + 1 if self.emitted else self.u


AlignmentPath = Tuple[AlignmentEntry, ...]


def check_alignment(path: Sequence[AlignmentEntry], T: int, U: int) -> None:
    """
    :raises ContractError: unless the path has one entry per frame, in order, with u non-decreasing and within U
    """
    if len(path) != T:
        raise ContractError("alignment has {} entries for {} frames".format(len(path), T))
    u = 0
    for t, e in enumerate(path):
        if e.frame != t or e.u != u:
            raise ContractError("alignment entry {} is out of sequence".format(e))
        if e.u_after > U:
            raise ContractError("alignment entry {} moves past label position {}".format(e, U))
        u = e.u_after


def greedy_align(lat: JointLattice) -> Tuple[List[int], AlignmentPath]:
    """Greedy decisions over an explicit lattice: at most one emission per frame and never beyond label U"""
    lp = lat.log_probs.values
    u = 0
    tokens: List[int] = []
    path = []
    for t in range(lat.T):
        token = int(np.argmax(lp[t, u]))
        if token != BLANK_ID and u < lat.U:
            path.append(AlignmentEntry(t, token, u))
            tokens.append(token)
            u += 1
        else:
            path.append(AlignmentEntry(t, BLANK_ID, u))
    return tokens, tuple(path)


class DecodeState(NamedTuple):
    """Everything one stream needs between frames.

    `last_h_enc` and `last_joint` are the encoder output and the pre-softmax joint vector at (latest frame, u in
    force at that frame); the streaming adaptor reads them.
    """
    encoder: EncoderState
    predictor: PredictorState
    u: int
    tokens: Tuple[int, ...]
    last_h_enc: Optional[np.ndarray] = None
    last_joint: Optional[np.ndarray] = None

    @property
    def frames_seen(self) -> int:
        return self.encoder.frames_seen


class Transducer(Module):
    def __init__(self, encoder_cfg: EncoderConfig, predictor_cfg: PredictorConfig, joint_cfg: JointConfig,
                 rng: np.random.Generator):
        super().__init__()
        self.encoder = self.child("encoder", Encoder(encoder_cfg, rng))
        self.predictor = self.child("predictor", Predictor(predictor_cfg, rng))
        self.joint = self.child("joint", Joint(encoder_cfg.model_dim, predictor_cfg.hidden_dim, joint_cfg,
                                               predictor_cfg.vocab_size, rng))

    @property
    def vocab_size(self) -> int:
        return self.predictor.cfg.vocab_size

    def encode(self, x: TensorLike) -> Tensor:
        return self.encoder.encode(x)

    def predict(self, y: Sequence[int]) -> Tensor:
        return self.predictor.predict(y)

    def lattice(self, h_enc: Tensor, y: Sequence[int]) -> JointLattice:
        return self.joint(h_enc, self.predict(y))

    def loss(self, x: TensorLike, y: Sequence[int]) -> Tensor:
        return transducer_loss(self.lattice(self.encode(x), y), y)

    def _decide(self, joint_row: np.ndarray) -> int:
        return int(np.argmax(joint_row))

    def greedy_from_encoding(self, h_enc: np.ndarray) -> Tuple[List[int], AlignmentPath]:
        """Greedy decoding over precomputed encoder outputs, one emission per frame at most"""
        pred = self.predictor.start()
        u = 0
        tokens: List[int] = []
        path = []
        for t in range(h_enc.shape[0]):
            token = self._decide(self.joint.row(h_enc[t], pred.h))
            path.append(AlignmentEntry(t, token, u))
            if token != BLANK_ID:
                tokens.append(token)
                pred = self.predictor.advance(pred, token)
                u += 1
        return tokens, tuple(path)

    def greedy_decode(self, x: TensorLike) -> Tuple[List[int], AlignmentPath]:
        """Offline greedy decoding with the whole-utterance encoder"""
        return self.greedy_from_encoding(self.encode(x).values)

    def start_stream(self) -> DecodeState:
        return DecodeState(self.encoder.start(), self.predictor.start(), 0, ())

    def stream_decode_step(self, frame: TensorLike,
                           state: DecodeState) -> Tuple[List[int], AlignmentEntry, DecodeState]:
        """Consume one frame: encode it, take the greedy decision at (t, u) and advance.

        :returns: the tokens emitted at this frame (zero or one), the alignment entry and the new state
        """
        h_t, enc_state = self.encoder.step(frame, state.encoder)
        return self.stream_decide(h_t, enc_state, state)

    def stream_decide(self, h_t: np.ndarray, enc_state: EncoderState,
                      state: DecodeState) -> Tuple[List[int], AlignmentEntry, DecodeState]:
        """The decision half of stream_decode_step, for an already encoded frame"""
        joint_row = self.joint.row(h_t, state.predictor.h)
        token = self._decide(joint_row)
        entry = AlignmentEntry(state.encoder.frames_seen, token, state.u)
        if token == BLANK_ID:
            new_state = DecodeState(enc_state, state.predictor, state.u, state.tokens, h_t, joint_row)
            emitted: List[int] = []
        else:
            new_state = DecodeState(enc_state, self.predictor.advance(state.predictor, token), state.u + 1,
                                    state.tokens + (token,), h_t, joint_row)
            emitted = [token]
        logger.debug("frame %d: decision %d at u=%d", entry.frame, token, entry.u)
        return emitted, entry, new_state

    def closing_joint(self, state: DecodeState) -> np.ndarray:
        """The joint vector at (last frame, label position after its decision)"""
        if state.last_h_enc is None:
            raise ContractError("no frame has been decoded yet")
        return self.joint.row(state.last_h_enc, state.predictor.h)

    def macs_per_frame(self) -> int:
        return self.encoder.macs_per_frame() + self.predictor.macs_per_frame() + self.joint.macs_per_frame()
