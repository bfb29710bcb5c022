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

"""Declarative configuration.

Every component is configured by a frozen dataclass and the whole run by a RunConfig, which is read from and written
to JSON. Reading is strict: an unknown key anywhere in the document is an error naming its dotted path.
"""

import json
import os
from dataclasses import dataclass, field, fields, asdict
from typing import Any, Dict, Mapping, Optional, Tuple, Type, TypeVar, Union, get_args, get_origin, get_type_hints

from .constants import (BLANK_ID, DEFAULT_LEFT_CONTEXT, DEFAULT_RIGHT_CONTEXT, DEFAULT_WAIT_KS,
                        DEFAULT_TEACHER_OFFSET, DEFAULT_ALPHA, KMEANS_MAX_ITER, KMEANS_TOLERANCE)
from .exceptions import ConfigError
from .timing import Timestamp

__all__ = ["EncoderConfig", "PredictorConfig", "JointConfig", "AdaptorConfig", "AdaptorMode", "WaitKConfig",
           "QuantizerConfig", "CorpusConfig", "SyntheticCorpusSpec", "TrainConfig", "PipelineConfig",
           "RunConfig", "resolve_seed", "SEED_ENV_VAR", "STAGES"]

SEED_ENV_VAR = "SDSR_SEED"

STAGES = ("encoder", "transducer", "adaptor", "waitk", "vocoder")

C = TypeVar("C")


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ConfigError(msg)


@dataclass(frozen=True)
class EncoderConfig:
    feature_dim: int = 8
    num_layers: int = 2
    model_dim: int = 32
    num_heads: int = 4
    ff_dim: int = 64
    left_context: int = DEFAULT_LEFT_CONTEXT
    right_context: int = DEFAULT_RIGHT_CONTEXT

    def __post_init__(self) -> None:
        _require(self.feature_dim >= 1, "encoder.feature_dim must be positive")
        _require(self.num_layers >= 1, "encoder.num_layers must be positive")
        _require(self.num_heads >= 1 and self.model_dim % self.num_heads == 0,
                 "encoder.model_dim must be divisible by encoder.num_heads")
        _require(self.left_context >= 0 and self.right_context >= 0, "encoder contexts must be non-negative")

    @property
    def streaming(self) -> bool:
        return self.right_context == 0


@dataclass(frozen=True)
class PredictorConfig:
    vocab_size: int = 12
    embed_dim: int = 16
    hidden_dim: int = 32
    blank_id: int = BLANK_ID

    def __post_init__(self) -> None:
        _require(self.vocab_size >= 2, "predictor.vocab_size must include blank and at least one token")
        _require(self.blank_id == BLANK_ID, "predictor.blank_id is fixed at {}".format(BLANK_ID))


@dataclass(frozen=True)
class JointConfig:
    joint_dim: int = 32


class AdaptorMode(object):
    """Fusion presets. Each is an exact algebraic reduction of the gated fusion."""
    EXPLICIT = "explicit"
    IMPLICIT = "implicit"
    FUSION = "fusion"
    FUSION_GATED = "fusion_gated"

    ALL = (EXPLICIT, IMPLICIT, FUSION, FUSION_GATED)


@dataclass(frozen=True)
class AdaptorConfig:
    adaptor_dim: int = 32
    gate_dim: int = 32
    mode: str = AdaptorMode.FUSION_GATED
    lambda_init_logit: float = 0.0

    def __post_init__(self) -> None:
        _require(self.mode in AdaptorMode.ALL, "adaptor.mode must be one of {}".format(", ".join(AdaptorMode.ALL)))


@dataclass(frozen=True)
class WaitKConfig:
    ks: Tuple[int, ...] = DEFAULT_WAIT_KS
    teacher_offset: int = DEFAULT_TEACHER_OFFSET
    alpha: float = DEFAULT_ALPHA
    num_layers: int = 2
    model_dim: int = 32
    num_heads: int = 4
    ff_dim: int = 64
    code_embed_dim: int = 16
    pe_dim: int = 16

    def __post_init__(self) -> None:
        _require(len(self.ks) > 0, "waitk.ks must not be empty")
        _require(all(isinstance(k, int) and k >= 1 for k in self.ks), "waitk.ks must all be at least 1")
        _require(self.teacher_offset > 0, "waitk.teacher_offset must be positive")
        _require(0.0 <= self.alpha <= 1.0, "waitk.alpha must lie in [0, 1]")
        _require(self.model_dim % self.num_heads == 0, "waitk.model_dim must be divisible by waitk.num_heads")
        _require(self.pe_dim % 2 == 0, "waitk.pe_dim must be even")

    @property
    def student_ks(self) -> Tuple[int, ...]:
        """The offsets that are distilled: those whose teacher offset is still one of the trained views"""
        top = max(self.ks)
        return tuple(k for k in self.ks if k + self.teacher_offset <= top)


@dataclass(frozen=True)
class QuantizerConfig:
    code_vocab: int = 16
    max_iter: int = KMEANS_MAX_ITER
    tolerance: float = KMEANS_TOLERANCE

    def __post_init__(self) -> None:
        _require(self.code_vocab >= 1, "quantizer.code_vocab must be positive")
        _require(self.max_iter >= 1, "quantizer.max_iter must be positive")


@dataclass(frozen=True)
class CorpusConfig:
    """Parameters of the synthetic normal/dysarthric corpus.

    A severity level from 1 (most severe) to 5 (near normal) replaces the four dysarthria parameters with a preset.
    """
    num_utterances: int = 64
    vocab_size: int = 12
    feature_dim: int = 8
    min_tokens: int = 3
    max_tokens: int = 8
    frames_per_token: int = 2
    prototype_scale: float = 1.0
    normal_noise: float = 0.05
    stretch_min: float = 1.25
    stretch_max: float = 2.0
    substitution_prob: float = 0.05
    frame_noise: float = 0.1
    distortion: float = 0.3
    severity: Optional[int] = None
    held_out_fraction: float = 0.125
    seed: int = 0

    def __post_init__(self) -> None:
        _require(self.num_utterances >= 1, "corpus.num_utterances must be positive")
        _require(self.vocab_size >= 2, "corpus.vocab_size must include blank and at least one token")
        _require(1 <= self.min_tokens, "corpus.min_tokens must be at least 1")
        _require(self.min_tokens <= self.max_tokens, "corpus.min_tokens must not exceed corpus.max_tokens")
        _require(self.frames_per_token >= 1, "corpus.frames_per_token must be positive")
        _require(0.0 < self.stretch_min <= self.stretch_max, "corpus stretch range is empty")
        _require(0.0 <= self.substitution_prob <= 1.0, "corpus.substitution_prob must lie in [0, 1]")
        _require(self.normal_noise >= 0 and self.frame_noise >= 0 and self.distortion >= 0,
                 "corpus noise scales must be non-negative")
        _require(self.severity is None or 1 <= self.severity <= 5, "corpus.severity must be 1..5")
        _require(0.0 <= self.held_out_fraction < 1.0, "corpus.held_out_fraction must lie in [0, 1)")


SyntheticCorpusSpec = CorpusConfig


@dataclass(frozen=True)
class TrainConfig:
    stage: int = 1
    batch_size: int = 4
    learning_rate: float = 0.01
    steps: int = 200
    frozen: Tuple[str, ...] = ()
    rnnt_weight: float = 1.0
    tts_weight: float = 1.0
    clip_norm: Optional[float] = None
    log_every: int = 10

    def __post_init__(self) -> None:
        _require(self.stage in (1, 2), "train.stage must be 1 or 2")
        _require(self.batch_size >= 1, "train.batch_size must be positive")
        _require(self.learning_rate >= 0.0, "train.learning_rate must be non-negative")
        _require(self.steps >= 0, "train.steps must be non-negative")
        _require(self.clip_norm is None or self.clip_norm > 0, "train.clip_norm must be positive")
        _require(self.log_every >= 1, "train.log_every must be positive")


def _default_stage_costs() -> Dict[str, float]:
    return {"encoder": 0.004, "transducer": 0.002, "adaptor": 0.001, "waitk": 0.02, "vocoder": 0.001}


@dataclass(frozen=True)
class PipelineConfig:
    clock: str = "logical"
    frame_duration: float = 0.04
    stage_costs: Dict[str, float] = field(default_factory=_default_stage_costs)
    k: int = 10
    chunk_size: int = 1
    sentence_level: bool = False

    def __post_init__(self) -> None:
        _require(self.clock in ("wall", "logical"), "pipeline.clock must be 'wall' or 'logical'")
        _require(self.frame_duration > 0, "pipeline.frame_duration must be positive")
        _require(self.k >= 1, "pipeline.k must be at least 1")
        _require(self.chunk_size >= 1, "pipeline.chunk_size must be at least 1")
        for name, cost in self.stage_costs.items():
            _require(name in STAGES, "pipeline.stage_costs.{} is not a pipeline stage".format(name))
            _require(cost >= 0, "pipeline.stage_costs.{} must be non-negative".format(name))

    @property
    def frame_hop(self) -> Timestamp:
        return Timestamp.from_float(self.frame_duration)


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    predictor: PredictorConfig = field(default_factory=PredictorConfig)
    joint: JointConfig = field(default_factory=JointConfig)
    adaptor: AdaptorConfig = field(default_factory=AdaptorConfig)
    waitk: WaitKConfig = field(default_factory=WaitKConfig)
    quantizer: QuantizerConfig = field(default_factory=QuantizerConfig)
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)

    def __post_init__(self) -> None:
        _require(self.corpus.vocab_size == self.predictor.vocab_size,
                 "corpus.vocab_size and predictor.vocab_size differ")
        _require(self.corpus.feature_dim == self.encoder.feature_dim,
                 "corpus.feature_dim and encoder.feature_dim differ")

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "RunConfig":
        return _from_dict(cls, data, "")

    def to_dict(self) -> Dict[str, Any]:
        d = asdict(self)
        return json.loads(json.dumps(d))

    def replace(self, **changes: Any) -> "RunConfig":
        d = self.to_dict()
        d.update(changes)
        return RunConfig.from_dict(d)

    @classmethod
    def load(cls, path: str) -> "RunConfig":
        try:
            with open(path, "r") as f:
                data = json.load(f)
        except OSError as e:
            raise ConfigError("Cannot read config {}: {}".format(path, e))
        except json.JSONDecodeError as e:
            raise ConfigError("Config {} is not valid JSON: {}".format(path, e))
        return cls.from_dict(data)

    def save(self, path: str) -> None:
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
            f.write("\n")


_NESTED: Dict[str, type] = {
    "encoder": EncoderConfig,
    "predictor": PredictorConfig,
    "joint": JointConfig,
    "adaptor": AdaptorConfig,
    "waitk": WaitKConfig,
    "quantizer": QuantizerConfig,
    "corpus": CorpusConfig,
    "train": TrainConfig,
    "pipeline": PipelineConfig,
}


def _join(path: str, key: str) -> str:
    return key if not path else path + "." + key


def _coerce(path: str, tp: Any, value: Any) -> Any:
    """Check a JSON value against a declared field type, converting where JSON has no exact counterpart"""
    origin, args = get_origin(tp), get_args(tp)
    if origin is Union:
        inner = [a for a in args if a is not type(None)]
        if value is None and len(inner) < len(args):
            return None
        return _coerce(path, inner[0], value)
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError("{} must be a boolean".format(path))
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError("{} must be an integer".format(path))
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError("{} must be a number".format(path))
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError("{} must be a string".format(path))
        return value
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError("{} must be a list".format(path))
        return tuple(_coerce("{}[{}]".format(path, i), args[0], v) for i, v in enumerate(value))
    if origin is dict:
        if not isinstance(value, Mapping):
            raise ConfigError("{} must be an object".format(path))
        return {k: _coerce(_join(path, k), args[1], v) for k, v in value.items()}
    raise ConfigError("{} has an unsupported type {}".format(path, tp))


def _from_dict(cls: Type[C], data: Any, path: str) -> C:
    if not isinstance(data, Mapping):
        raise ConfigError("{} must be an object".format(path or "config"))
    known = {f.name for f in fields(cls)}
    for key in data:
        if key not in known:
            raise ConfigError("Unknown configuration key {!r}".format(_join(path, key)))

    hints = get_type_hints(cls)
    kwargs: Dict[str, Any] = {}
    for key, value in data.items():
        if cls is RunConfig and key in _NESTED:
            kwargs[key] = _from_dict(_NESTED[key], value, _join(path, key))
        else:
            kwargs[key] = _coerce(_join(path, key), hints[key], value)
    return cls(**kwargs)  # type: ignore


def resolve_seed(flag: Optional[int], config_seed: int, environ: Optional[Mapping[str, str]] = None) -> int:
    """The --seed flag wins, then the SDSR_SEED environment variable, then the configured seed"""
    if flag is not None:
        return flag
    env = os.environ if environ is None else environ
    if env.get(SEED_ENV_VAR):
        try:
            return int(env[SEED_ENV_VAR])
        except ValueError:
            raise ConfigError("{} must be an integer, got {!r}".format(SEED_ENV_VAR, env[SEED_ENV_VAR]))
    return config_seed
