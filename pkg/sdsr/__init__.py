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

"""Simultaneous dysarthric speech reconstruction at desk scale.

A streaming transducer recognises tokens frame by frame, a frame-level adaptor turns its decisions and encoder
outputs into semantic vectors, a wait-k decoder predicts discrete codes from those vectors and a codebook vocoder
turns the codes back into feature frames chunk by chunk. Everything runs on a small reverse-mode autodiff library
over numpy, and is trained and measured on synthetic corpora.
"""

from .exceptions import (SdsrError, DimensionError, NumericError, ContractError, IndexRangeError, ConfigError,
                         CheckpointError, DivergenceError)
from .config import (RunConfig, EncoderConfig, PredictorConfig, JointConfig, AdaptorConfig, AdaptorMode,
                     WaitKConfig, QuantizerConfig, CorpusConfig, SyntheticCorpusSpec, TrainConfig, PipelineConfig)
from .timing import Timestamp, FrameRange, LogicalClock, WallClock
from .transducer import Transducer, JointLattice, transducer_loss
from .adaptor import Adaptor, StreamingAdaptor
from .waitk import WaitKDecoder, forward_waitk, loss_total
from .quantizer import Codebook, fit_codebook, chunk_vocode
from .pipeline import ModelBundle, StreamSession, LatencyReport, run_streaming, run_offline, measure_latency
from .corpus import Corpus, gen_corpus
from .training import stage1_train, stage2_finetune
from .metrics import token_error_rate

__all__ = [
    "SdsrError", "DimensionError", "NumericError", "ContractError", "IndexRangeError", "ConfigError",
    "CheckpointError", "DivergenceError",
    "RunConfig", "EncoderConfig", "PredictorConfig", "JointConfig", "AdaptorConfig", "AdaptorMode", "WaitKConfig",
    "QuantizerConfig", "CorpusConfig", "SyntheticCorpusSpec", "TrainConfig", "PipelineConfig",
    "Timestamp", "FrameRange", "LogicalClock", "WallClock",
    "Transducer", "JointLattice", "transducer_loss",
    "Adaptor", "StreamingAdaptor",
    "WaitKDecoder", "forward_waitk", "loss_total",
    "Codebook", "fit_codebook", "chunk_vocode",
    "ModelBundle", "StreamSession", "LatencyReport", "run_streaming", "run_offline", "measure_latency",
    "Corpus", "gen_corpus",
    "stage1_train", "stage2_finetune",
    "token_error_rate"]
