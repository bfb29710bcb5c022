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

"""Small configurations shared by the model tests"""

import os
import unittest
from typing import Dict, Optional

import numpy as np

from sdsr.config import (RunConfig, EncoderConfig, PredictorConfig, JointConfig, AdaptorConfig, WaitKConfig,
                         QuantizerConfig, CorpusConfig, TrainConfig, PipelineConfig)
from sdsr.pipeline import ModelBundle
from sdsr.quantizer import Codebook
from sdsr.timing import Timestamp

FEATURE_DIM = 4
VOCAB = 5
CODE_VOCAB = 4
HOP = Timestamp.from_millisec(40)

# the slow trend tests run only when this is set to 1
RUN_SLOW = os.environ.get("SDSR_RUN_SLOW") == "1"

slow = unittest.skipUnless(RUN_SLOW, "set SDSR_RUN_SLOW=1 to run the slow trend tests")


def small_config(stage_costs: Optional[Dict[str, float]] = None, **pipeline: object) -> RunConfig:
    return RunConfig(
        seed=3,
        encoder=EncoderConfig(feature_dim=FEATURE_DIM, num_layers=1, model_dim=8, num_heads=2, ff_dim=16,
                              left_context=4),
        predictor=PredictorConfig(vocab_size=VOCAB, embed_dim=4, hidden_dim=8),
        joint=JointConfig(joint_dim=8),
        adaptor=AdaptorConfig(adaptor_dim=6, gate_dim=6),
        waitk=WaitKConfig(ks=(1, 2, 4), teacher_offset=2, num_layers=1, model_dim=8, num_heads=2, ff_dim=16,
                          code_embed_dim=4, pe_dim=4),
        quantizer=QuantizerConfig(code_vocab=CODE_VOCAB),
        corpus=CorpusConfig(num_utterances=8, vocab_size=VOCAB, feature_dim=FEATURE_DIM, min_tokens=2,
                            max_tokens=3, held_out_fraction=0.25, seed=11),
        train=TrainConfig(batch_size=2, steps=2, learning_rate=0.01, log_every=1),
        pipeline=PipelineConfig(stage_costs=dict(stage_costs) if stage_costs is not None else
                                PipelineConfig().stage_costs, **pipeline))


def small_codebook(seed: int = 5) -> Codebook:
    return Codebook(np.random.default_rng(seed).normal(size=(CODE_VOCAB, FEATURE_DIM)), HOP)


def small_bundle(cfg: Optional[RunConfig] = None, seed: Optional[int] = None) -> ModelBundle:
    return ModelBundle.build(cfg or small_config(), small_codebook(), seed)


def frames(T: int, seed: int = 0) -> np.ndarray:
    return np.random.default_rng(seed).normal(size=(T, FEATURE_DIM))
