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

"""Synthetic paired corpora of normal and dysarthric utterances.

Every token has a prototype feature vector. A normal utterance holds each of its tokens for frames_per_token frames,
prototype plus a little noise. Its dysarthric twin says the same tokens more slowly: the normal track is time
stretched by a per-utterance factor, each token may be mispronounced as another token's prototype, every frame is
pushed along a fixed token-specific direction by `distortion` and noise of scale `frame_noise` is added.

The decoder targets of both variants come from the normal track: the normal codes are the quantized normal frames
and the dysarthric codes are those codes resampled onto the stretched timeline, so both variants have one code per
frame.

On disk a corpus is a directory holding manifest.json, codebook.sdsr and one container `{id}.{variant}.sdsr` per
utterance with the records "features", "tokens" and "codes".
"""

import json
import logging
import os
from dataclasses import replace
from typing import Any, Dict, Iterator, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .config import CorpusConfig, QuantizerConfig
from .exceptions import CheckpointError, ConfigError
from .numerics import load_tensors, save_tensors
from .quantizer import Codebook, fit_codebook
from .timing import Timestamp, TimestampConstructionType, as_timestamp

__all__ = ["Utterance", "Corpus", "NORMAL", "DYSARTHRIC", "SEVERITY_PRESETS", "apply_severity",
           "gen_corpus", "save_corpus", "load_corpus", "stretch_indices"]

logger = logging.getLogger(__name__)

NORMAL = "normal"
DYSARTHRIC = "dys"
VARIANTS = (NORMAL, DYSARTHRIC)

MANIFEST = "manifest.json"
CODEBOOK = "codebook.sdsr"
MANIFEST_VERSION = 1

# level: (stretch_min, stretch_max, substitution_prob, frame_noise, distortion)
SEVERITY_PRESETS: Dict[int, Tuple[float, float, float, float, float]] = {
    1: (2.0, 3.0, 0.15, 0.3, 0.8),
    2: (1.75, 2.5, 0.1, 0.2, 0.6),
    3: (1.5, 2.0, 0.05, 0.15, 0.4),
    4: (1.25, 1.5, 0.02, 0.1, 0.2),
    5: (1.0, 1.25, 0.0, 0.05, 0.1),
}


def apply_severity(spec: CorpusConfig) -> CorpusConfig:
    """Replace the dysarthria parameters by the preset of spec.severity, if one is set"""
    if spec.severity is None:
        return spec
    stretch_min, stretch_max, substitution, noise, distortion = SEVERITY_PRESETS[spec.severity]
    return replace(spec, stretch_min=stretch_min, stretch_max=stretch_max, substitution_prob=substitution,
                   frame_noise=noise, distortion=distortion)


class Utterance(NamedTuple):
    id: str
    variant: str
    features: np.ndarray
    tokens: Tuple[int, ...]
    codes: np.ndarray

    @property
    def T(self) -> int:
        return self.features.shape[0]

    @property
    def U(self) -> int:
        return len(self.tokens)


class Corpus(object):
    """Pairs of normal and dysarthric utterances sharing token sequences, with the codebook of their targets"""

    def __init__(self, normal: Sequence[Utterance], dysarthric: Sequence[Utterance], codebook: Codebook,
                 held_out: Sequence[str] = ()):
        if [u.id for u in normal] != [u.id for u in dysarthric]:
            raise ConfigError("normal and dysarthric utterances are not paired")
        self.normal = list(normal)
        self.dysarthric = list(dysarthric)
        self.codebook = codebook
        self.held_out = frozenset(held_out)

    def __len__(self) -> int:
        return len(self.normal)

    def pairs(self) -> Iterator[Tuple[Utterance, Utterance]]:
        return zip(self.normal, self.dysarthric)

    def variant(self, variant: str, held_out: Optional[bool] = None) -> List[Utterance]:
        """Utterances of one variant, optionally only the training (False) or held-out (True) part"""
        utts = self.normal if variant == NORMAL else self.dysarthric
        if held_out is None:
            return list(utts)
        return [u for u in utts if (u.id in self.held_out) == held_out]

    def get(self, utt_id: str, variant: str = DYSARTHRIC) -> Utterance:
        for u in self.variant(variant):
            if u.id == utt_id:
                return u
        raise KeyError("no {} utterance {!r}".format(variant, utt_id))

    def manifest(self) -> Dict[str, Any]:
        return {
            "version": MANIFEST_VERSION,
            "hop_ns": self.codebook.hop.to_nanosec(),
            "utterances": [{"id": u.id, "variant": u.variant, "T": u.T, "U": u.U, "held_out": u.id in self.held_out}
                           for pair in self.pairs() for u in pair],
        }


def stretch_indices(n: int, factor: float) -> np.ndarray:
    """For a track of n frames slowed down by `factor`, the source frame of every output frame"""
    m = max(1, int(round(n * factor)))
    return (np.arange(m) * n) // m


def _utterance_pair(spec: CorpusConfig, index: int, prototypes: np.ndarray,
                    directions: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray, Tuple[int, ...]]:
    """Normal frames, dysarthric frames, the dysarthric-to-normal frame map and the tokens of one pair"""
    rng = np.random.default_rng([spec.seed, index])
    U = int(rng.integers(spec.min_tokens, spec.max_tokens + 1))
    tokens = tuple(int(t) for t in rng.integers(1, spec.vocab_size, size=U))
    frame_tokens = np.repeat(np.array(tokens), spec.frames_per_token)
    normal = prototypes[frame_tokens] + spec.normal_noise * rng.normal(size=(frame_tokens.size, spec.feature_dim))

    factor = float(rng.uniform(spec.stretch_min, spec.stretch_max))
    idx = stretch_indices(normal.shape[0], factor)
    spoken = np.array(tokens)
    swap = rng.random(U) < spec.substitution_prob
    if spec.vocab_size > 2:
        others = rng.integers(1, spec.vocab_size - 1, size=U)
        others = others + (others >= spoken)
        spoken = np.where(swap, others, spoken)
    spoken_frames = np.repeat(spoken, spec.frames_per_token)[idx]
    dys = (normal[idx] + (prototypes[spoken_frames] - prototypes[frame_tokens[idx]])
           + spec.distortion * directions[frame_tokens[idx]]
           + spec.frame_noise * rng.normal(size=(idx.size, spec.feature_dim)))
    return normal, dys, idx, tokens


def gen_corpus(spec: CorpusConfig, quantizer: Optional[QuantizerConfig] = None,
               hop: TimestampConstructionType = Timestamp.from_millisec(40)) -> Corpus:
    """Generate a corpus and fit the codebook of its targets on the normal frames.

    Deterministic in spec.seed; each utterance draws from its own generator seeded by (seed, index).

    :raises ContractError: if the normal frames hold fewer distinct vectors than there are codes
    """
    spec = apply_severity(spec)
    quantizer = quantizer or QuantizerConfig()
    rng = np.random.default_rng(spec.seed)
    prototypes = rng.normal(0.0, spec.prototype_scale, size=(spec.vocab_size, spec.feature_dim))
    directions = rng.normal(size=(spec.vocab_size, spec.feature_dim))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)

    raw = [_utterance_pair(spec, i, prototypes, directions) for i in range(spec.num_utterances)]
    codebook = fit_codebook(np.concatenate([normal for normal, _, _, _ in raw]), quantizer.code_vocab, spec.seed,
                            as_timestamp(hop), quantizer.max_iter, quantizer.tolerance)

    normal_utts, dys_utts = [], []
    for i, (normal, dys, idx, tokens) in enumerate(raw):
        utt_id = "utt{:04d}".format(i)
        codes = codebook.quantize_sequence(normal)
        normal_utts.append(Utterance(utt_id, NORMAL, normal, tokens, codes))
        dys_utts.append(Utterance(utt_id, DYSARTHRIC, dys, tokens, codes[idx]))

    n_held = int(round(spec.num_utterances * spec.held_out_fraction))
    held_out = [u.id for u in normal_utts[len(normal_utts) - n_held:]] if n_held else []
    logger.info("generated %d utterance pairs (%d held out), %d normal and %d dysarthric frames",
                len(normal_utts), len(held_out), sum(u.T for u in normal_utts), sum(u.T for u in dys_utts))
    return Corpus(normal_utts, dys_utts, codebook, held_out)


def _record_path(directory: str, utt_id: str, variant: str) -> str:
    return os.path.join(directory, "{}.{}.sdsr".format(utt_id, variant))


def save_corpus(corpus: Corpus, directory: str) -> None:
    os.makedirs(directory, exist_ok=True)
    for pair in corpus.pairs():
        for u in pair:
            save_tensors(_record_path(directory, u.id, u.variant),
                         {"features": u.features, "tokens": np.array(u.tokens, dtype=np.float64),
                          "codes": u.codes.astype(np.float64)})
    corpus.codebook.save(os.path.join(directory, CODEBOOK))
    with open(os.path.join(directory, MANIFEST), "w") as f:
        json.dump(corpus.manifest(), f, indent=2, sort_keys=True)
        f.write("\n")
    logger.info("wrote %d utterance pairs to %s", len(corpus), directory)


def _as_ints(values: np.ndarray, name: str, path: str) -> np.ndarray:
    ints = values.astype(np.int64)
    if not np.array_equal(ints, values):
        raise CheckpointError("record {!r} of {} does not hold integers".format(name, path))
    return ints


def load_corpus(directory: str) -> Corpus:
    """
    :raises CheckpointError: if the manifest or a record is missing or malformed
    """
    try:
        with open(os.path.join(directory, MANIFEST), "r") as f:
            manifest = json.load(f)
    except OSError as e:
        raise CheckpointError("Cannot read corpus manifest in {}: {}".format(directory, e))
    except json.JSONDecodeError as e:
        raise CheckpointError("Corpus manifest in {} is not valid JSON: {}".format(directory, e))
    if manifest.get("version") != MANIFEST_VERSION:
        raise CheckpointError("Unsupported corpus manifest version {!r}".format(manifest.get("version")))

    codebook = Codebook.load(os.path.join(directory, CODEBOOK))
    by_variant: Dict[str, List[Utterance]] = {v: [] for v in VARIANTS}
    held_out = []
    for entry in manifest["utterances"]:
        variant = entry["variant"]
        if variant not in by_variant:
            raise CheckpointError("Unknown utterance variant {!r}".format(variant))
        path = _record_path(directory, entry["id"], variant)
        records = load_tensors(path)
        try:
            features, tokens, codes = records["features"], records["tokens"], records["codes"]
        except KeyError as e:
            raise CheckpointError("{} has no record {}".format(path, e))
        u = Utterance(entry["id"], variant, features, tuple(int(t) for t in _as_ints(tokens, "tokens", path)),
                      _as_ints(codes, "codes", path))
        if u.T != entry["T"] or u.U != entry["U"] or u.codes.shape[0] != u.T:
            raise CheckpointError("{} does not match its manifest entry".format(path))
        by_variant[variant].append(u)
        if entry.get("held_out") and variant == NORMAL:
            held_out.append(u.id)
    return Corpus(by_variant[NORMAL], by_variant[DYSARTHRIC], codebook, held_out)
