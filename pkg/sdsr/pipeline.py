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

"""The simultaneous runtime.

A StreamSession is fed one input frame at a time. Each frame is encoded, the transducer takes its greedy decision,
the adaptor releases the previous frame, the wait-k decoder emits every code its policy now allows and the vocoder
hands out a chunk whenever chunk_size codes have accumulated. Every stage runs inside a clock span, so the event log
of a run reduces to a LatencyReport.

Input frame i (0-based) arrives at i frame hops after the first. A chunk whose last code is b may not be emitted
before the arrival of frame b + k, the first frame after the last adaptor frame row b may read, or before the last
input frame if that comes sooner. In sentence-level mode nothing is emitted before the last input frame.
"""

import csv
import io
import logging
from contextlib import contextmanager
from itertools import chain
from typing import Any, Dict, FrozenSet, Iterator, List, NamedTuple, Optional, Tuple

import numpy as np

from .adaptor import Adaptor, AdaptorFrame, StreamingAdaptor
from .config import PipelineConfig, RunConfig, STAGES
from .exceptions import ConfigError, ContractError
from .numerics import ParameterSet, TensorLike, as_tensor, load_tensors, no_grad, save_tensors
from .quantizer import ChunkVocoder, Codebook, chunk_vocode
from .timing import (Clock, FrameRange, LogicalClock, StageSpan, Timestamp, TimestampConstructionType, WallClock,
                     as_timestamp)
from .transducer import AlignmentEntry, DecodeState, Transducer
from .waitk import IncrementalWaitKDecoder, WaitKDecoder, forward_waitk

__all__ = ["ModelBundle", "StreamSession", "ChunkEvent", "EventLog", "LatencyReport", "StreamResult",
           "OfflineResult", "run_streaming", "run_offline", "measure_latency", "count_params_flops", "make_clock"]

logger = logging.getLogger(__name__)


class ModelBundle(object):
    """Every trained component of a system, with the codebook its decoder predicts into.

    Parameter names carry the prefix of their component, "transducer.", "adaptor." or "waitk.".
    """

    def __init__(self, cfg: RunConfig, transducer: Transducer, adaptor: Adaptor, waitk: WaitKDecoder,
                 codebook: Codebook):
        if codebook.code_vocab != waitk.code_vocab:
            raise ConfigError("codebook has {} codes but the decoder predicts {}".format(
                codebook.code_vocab, waitk.code_vocab))
        if codebook.hop != cfg.pipeline.frame_hop:
            raise ContractError("codebook hop {} differs from the frame hop {}".format(
                codebook.hop, cfg.pipeline.frame_hop))
        self.cfg = cfg
        self.transducer = transducer
        self.adaptor = adaptor
        self.waitk = waitk
        self.codebook = codebook

    @classmethod
    def build(cls, cfg: RunConfig, codebook: Codebook, seed: Optional[int] = None) -> "ModelBundle":
        """Freshly initialised models, drawn in a fixed order from one seeded generator"""
        if codebook.code_vocab != cfg.quantizer.code_vocab:
            raise ConfigError("codebook has {} codes but quantizer.code_vocab is {}".format(
                codebook.code_vocab, cfg.quantizer.code_vocab))
        rng = np.random.default_rng(cfg.seed if seed is None else seed)
        transducer = Transducer(cfg.encoder, cfg.predictor, cfg.joint, rng)
        adaptor = Adaptor(cfg.adaptor, cfg.predictor.vocab_size, cfg.encoder.model_dim, rng)
        waitk = WaitKDecoder(cfg.waitk, cfg.adaptor.adaptor_dim, cfg.quantizer.code_vocab, rng)
        return cls(cfg, transducer, adaptor, waitk, codebook)

    def parameters(self) -> ParameterSet:
        return ParameterSet(chain(self.transducer.named_parameters("transducer."),
                                  self.adaptor.named_parameters("adaptor."),
                                  self.waitk.named_parameters("waitk.")))

    def num_parameters(self) -> int:
        return self.parameters().count()

    def macs_per_frame(self) -> int:
        context = self.cfg.encoder.left_context + self.cfg.encoder.right_context + 1
        return (self.transducer.macs_per_frame() + self.adaptor.macs_per_frame()
                + self.waitk.macs_per_frame(context))

    def frozen_names(self, stage: int) -> FrozenSet[str]:
        """Stage 2 trains the transducer only"""
        if stage == 1:
            return frozenset()
        return frozenset(n for n in self.parameters() if not n.startswith("transducer."))

    def state(self) -> Dict[str, np.ndarray]:
        state = self.parameters().state()
        state.update(self.codebook.to_tensors())
        return state

    def save(self, path: str) -> None:
        save_tensors(path, self.state())
        logger.info("saved %d parameters to %s", self.num_parameters(), path)

    @classmethod
    def load(cls, path: str, cfg: RunConfig) -> "ModelBundle":
        """
        :raises CheckpointError: if the container is malformed or its names do not match the configuration
        """
        tensors = load_tensors(path)
        codebook = Codebook.from_tensors(tensors)
        bundle = cls.build(cfg, codebook)
        params = {n: v for n, v in tensors.items() if not n.startswith("codebook.")}
        bundle.parameters().load_state(params, strict=True)
        return bundle

    def __repr__(self) -> str:
        return "ModelBundle(params={}, codebook={!r})".format(self.num_parameters(), self.codebook)


def make_clock(cfg: PipelineConfig) -> Clock:
    if cfg.clock == "wall":
        return WallClock()
    return LogicalClock({k: Timestamp.from_float(v) for k, v in cfg.stage_costs.items()})


class ChunkEvent(NamedTuple):
    """One vocoder chunk: the codes it covers, when it left and the earliest the policy allowed"""
    index: int
    first_code: int
    num_codes: int
    time: Timestamp
    earliest: Timestamp

    @property
    def codes(self) -> FrameRange:
        return FrameRange.from_start_length(self.first_code, self.num_codes)


class EventLog(object):
    """Arrival readings per input frame, every stage span and every chunk emission of one run"""

    def __init__(self) -> None:
        self.arrivals: List[Timestamp] = []
        self.spans: List[StageSpan] = []
        self.chunks: List[ChunkEvent] = []

    @property
    def num_frames(self) -> int:
        return len(self.arrivals)

    def stage_totals(self) -> Dict[str, Timestamp]:
        totals = {name: Timestamp() for name in STAGES}
        for span in self.spans:
            totals[span.stage] = totals.get(span.stage, Timestamp()) + span.duration
        return totals

    def compute_time(self) -> Timestamp:
        total = Timestamp()
        for span in self.spans:
            total = total + span.duration
        return total


class LatencyReport(object):
    """First-chunk response time, real-time factor and the model's size and per-frame cost"""

    CSV_FIELDS = ("first_response_s", "rtf", "params", "flops_per_frame") + tuple(
        "{}_total_s".format(s) for s in STAGES)

    def __init__(self, first_response: Timestamp, rtf: float, per_stage: Dict[str, Timestamp], num_frames: int,
                 params: int = 0, flops_per_frame: int = 0):
        self.first_response = first_response
        self.rtf = rtf
        self.per_stage = per_stage
        self.num_frames = num_frames
        self.params = params
        self.flops_per_frame = flops_per_frame

    @property
    def first_response_s(self) -> float:
        return self.first_response.to_float()

    def to_json(self) -> Dict[str, Any]:
        return {
            "first_response_s": self.first_response_s,
            "rtf": self.rtf,
            "params": self.params,
            "flops_per_frame": self.flops_per_frame,
            "per_stage": [{"stage": name,
                           "total_s": total.to_float(),
                           "per_frame_s": total.to_float() / self.num_frames}
                          for name, total in self.per_stage.items()],
        }

    def csv_row(self) -> Dict[str, Any]:
        row: Dict[str, Any] = {"first_response_s": self.first_response_s, "rtf": self.rtf,
                               "params": self.params, "flops_per_frame": self.flops_per_frame}
        for name in STAGES:
            row["{}_total_s".format(name)] = self.per_stage.get(name, Timestamp()).to_float()
        return row

    def to_csv(self) -> str:
        out = io.StringIO()
        writer = csv.DictWriter(out, fieldnames=self.CSV_FIELDS, lineterminator="\n")
        writer.writeheader()
        writer.writerow(self.csv_row())
        return out.getvalue()

    def __repr__(self) -> str:
        return "LatencyReport(first_response={}, rtf={:.4f}, params={}, flops_per_frame={})".format(
            self.first_response, self.rtf, self.params, self.flops_per_frame)


def measure_latency(log: EventLog, frame_duration: TimestampConstructionType,
                    params: int = 0, flops_per_frame: int = 0) -> LatencyReport:
    """Reduce an event log to a report.

    first_response is the first chunk emission minus the first input arrival. rtf is the summed duration of every
    stage span over the input duration, num_frames * frame_duration.

    :raises ContractError: if the log has no input or no output
    """
    if not log.arrivals or not log.chunks:
        raise ContractError("cannot measure latency of an empty event log")
    hop = as_timestamp(frame_duration)
    first_response = log.chunks[0].time - log.arrivals[0]
    rtf = log.compute_time().ratio(hop * log.num_frames)
    return LatencyReport(first_response, rtf, log.stage_totals(), log.num_frames, params, flops_per_frame)


def count_params_flops(bundle: ModelBundle) -> Tuple[int, int]:
    """Trainable scalar parameters, and two flops per multiply-accumulate for one streaming frame through every
    stage. The codebook lookup costs nothing.

    Every stage but the wait-k attention does a fixed amount of work per frame. The decoder attends to all earlier
    positions through its key and value cache, and that term is counted over the encoder window length.
    """
    return bundle.num_parameters(), 2 * bundle.macs_per_frame()


class StreamResult(NamedTuple):
    chunks: List[np.ndarray]
    codes: List[int]
    report: LatencyReport
    tokens: List[int]


class StreamSession(object):
    """The per-stream state of every stage and the event log of one run.

    A session has to be opened before it is fed; opening resets every stage, so a session can be reused for
    successive utterances, one at a time.
    """

    def __init__(self, bundle: Optional[ModelBundle] = None, cfg: Optional[PipelineConfig] = None,
                 clock: Optional[Clock] = None):
        self.bundle = bundle
        self.cfg = cfg if cfg is not None else (bundle.cfg.pipeline if bundle is not None else PipelineConfig())
        self._clock_override = clock
        self._open = False
        self._closed = False

    @classmethod
    def from_checkpoint(cls, path: str, cfg: RunConfig, clock: Optional[Clock] = None) -> "StreamSession":
        return cls(ModelBundle.load(path, cfg), cfg.pipeline, clock)

    @property
    def initialized(self) -> bool:
        return self.bundle is not None

    def open(self, k: Optional[int] = None, chunk_size: Optional[int] = None,
             sentence_level: Optional[bool] = None) -> None:
        """Start a new stream. Arguments left as None come from the pipeline configuration.

        :raises ContractError: if the session has no model bundle
        """
        if self.bundle is None:
            raise ContractError("stream session has no model bundle")
        self.k = self.cfg.k if k is None else k
        self.chunk_size = self.cfg.chunk_size if chunk_size is None else chunk_size
        self.sentence_level = self.cfg.sentence_level if sentence_level is None else sentence_level
        if self.k < 1:
            raise ContractError("wait-k offset must be at least 1, got {}".format(self.k))

        self.clock = self._clock_override if self._clock_override is not None else make_clock(self.cfg)
        self.origin = self.clock.now()
        self.hop = self.cfg.frame_hop
        self.log = EventLog()
        self._state: DecodeState = self.bundle.transducer.start_stream()
        self._adaptor = StreamingAdaptor(self.bundle.adaptor)
        self._decoder = IncrementalWaitKDecoder(self.bundle.waitk, None if self.sentence_level else self.k)
        self._vocoder = ChunkVocoder(self.bundle.codebook, self.chunk_size)
        self.alignment: List[AlignmentEntry] = []
        self.adaptor_frames: List[AdaptorFrame] = []
        self.codes: List[int] = []
        self.chunks: List[np.ndarray] = []
        self._open = True
        self._closed = False

    @contextmanager
    def _stage(self, name: str) -> Iterator[StageSpan]:
        with self.clock.stage(name) as span:
            yield span
        self.log.spans.append(span)

    @property
    def tokens(self) -> List[int]:
        return list(self._state.tokens)

    def feed(self, frame: TensorLike) -> List[np.ndarray]:
        """Consume one input frame; returns the chunks it released"""
        if not self._open or self._closed:
            raise ContractError("stream session is not open")
        before = len(self.chunks)
        i = self.log.num_frames
        self.log.arrivals.append(self.clock.wait_until(self.origin + self.hop * i))

        transducer = self.bundle.transducer
        with self._stage("encoder"):
            h_t, enc_state = transducer.encoder.step(as_tensor(frame), self._state.encoder)
        with self._stage("transducer"):
            _, entry, self._state = transducer.stream_decide(h_t, enc_state, self._state)
        self.alignment.append(entry)

        if self._adaptor.buffered:
            with self._stage("adaptor"):
                released = self._adaptor.push(self._state)
            self._take(released)
        else:
            self._adaptor.push(self._state)
        self._drain()
        logger.debug("frame %d: %d adaptor frames, %d codes, %d chunks", i, len(self.adaptor_frames),
                     len(self.codes), len(self.chunks))
        return self.chunks[before:]

    def close(self) -> List[np.ndarray]:
        """End of input: release the last adaptor frame and every remaining code and chunk"""
        if not self._open or self._closed:
            raise ContractError("stream session is not open")
        if self.log.num_frames == 0:
            raise ContractError("stream closed before any frame arrived")
        before = len(self.chunks)
        self._closed = True
        with self._stage("adaptor"):
            released = self._adaptor.flush(self.bundle.transducer, self._state)
        self._take(released)
        self._decoder.finish()
        self._drain()
        tail = self._vocoder.flush()
        if tail is not None:
            self._emit(tail)
        self._open = False
        return self.chunks[before:]

    def _take(self, released: Optional[AdaptorFrame]) -> None:
        if released is None:
            return
        self.adaptor_frames.append(released)
        self._decoder.push(released.h_apt)

    def _drain(self) -> None:
        while self._decoder.ready():
            with self._stage("waitk"):
                code = self._decoder.emit_next()
            self.codes.append(code)
            with self._stage("vocoder"):
                chunk = self._vocoder.push(code)
            if chunk is not None:
                self._emit(chunk)

    def _needed_frame(self, last_code: int) -> int:
        last = self.log.num_frames - 1
        if self.sentence_level:
            return last
        needed = last_code + self.k
        return min(needed, last) if self._closed else needed

    def _emit(self, chunk: np.ndarray) -> None:
        last_code = len(self.codes) - 1
        needed = self._needed_frame(last_code)
        if needed >= self.log.num_frames:
            raise ContractError("chunk ending at code {} emitted before input frame {} arrived".format(
                last_code, needed))
        earliest = self.log.arrivals[needed]
        now = self.clock.now()
        if now < earliest:
            raise ContractError("chunk ending at code {} emitted at {} before its earliest time {}".format(
                last_code, now, earliest))
        event = ChunkEvent(len(self.chunks), last_code - chunk.shape[0] + 1, chunk.shape[0], now, earliest)
        self.log.chunks.append(event)
        self.chunks.append(chunk)
        logger.debug("chunk %d: codes %s at %s", event.index, event.codes, now)

    def report(self) -> LatencyReport:
        if self.bundle is None:
            raise ContractError("stream session has no model bundle")
        params, flops = count_params_flops(self.bundle)
        return measure_latency(self.log, self.hop, params, flops)


def run_streaming(session: StreamSession, frames: TensorLike, k: Optional[int] = None,
                  chunk_size: Optional[int] = None, sentence_level: Optional[bool] = None) -> StreamResult:
    """Feed a whole utterance through a session frame by frame

    :raises ContractError: if the session has no model bundle or there are no frames
    """
    session.open(k, chunk_size, sentence_level)
    x = as_tensor(frames).values
    if x.ndim != 2 or x.shape[0] == 0:
        raise ContractError("input must be a non-empty [T, F] frame sequence, got {}".format(x.shape))
    for frame in x:
        session.feed(frame)
    session.close()
    report = session.report()
    logger.info("streamed %d frames with k=%s chunk_size=%d: %d codes in %d chunks, %r", x.shape[0],
                "sentence" if session.sentence_level else session.k, session.chunk_size, len(session.codes),
                len(session.chunks), report)
    return StreamResult(session.chunks, session.codes, report, session.tokens)


class OfflineResult(NamedTuple):
    chunks: List[np.ndarray]
    codes: List[int]
    tokens: List[int]
    adaptor_frames: List[AdaptorFrame]


def run_offline(bundle: ModelBundle, frames: TensorLike, k: Optional[int], chunk_size: int,
                sentence_level: bool = False) -> OfflineResult:
    """The whole-utterance reference for a streaming run.

    The encoder runs over the complete input, greedy decoding reads its outputs, the adaptor maps the full lattice
    along the alignment, every code row comes from a full wait-k forward over the complete adaptor output with the
    codes already decided as history, and the vocoder cuts the codes into chunks. None of it uses the frame-driven
    caches of a StreamSession.
    """
    x = as_tensor(frames).values
    if x.ndim != 2 or x.shape[0] == 0:
        raise ContractError("input must be a non-empty [T, F] frame sequence, got {}".format(x.shape))
    T = x.shape[0]
    transducer = bundle.transducer
    with no_grad():
        h_enc = transducer.encode(x)
        tokens, path = transducer.greedy_from_encoding(h_enc.values)
        adapted = bundle.adaptor(transducer.lattice(h_enc, tokens), path, h_enc)
        h_apt = adapted.h_apt.values

        offset = T if sentence_level or k is None else k
        codes = [0] * T
        for r in range(T):
            # row r is causal in the history, so the codes after it are placeholders
            codes[r] = int(np.argmax(forward_waitk(bundle.waitk, h_apt, codes, offset).values[r]))
    return OfflineResult(chunk_vocode(bundle.codebook, codes, chunk_size), codes, tokens, list(adapted.frames()))
