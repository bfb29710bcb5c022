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

"""A k-means codebook over target feature frames and a chunked lookup vocoder.

The codebook stands in for a learned vector quantizer: codes are the targets of the wait-k decoder and the vocoder
turns emitted codes back into feature frames, chunk by chunk.
"""

import logging
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from .constants import KMEANS_MAX_ITER, KMEANS_TOLERANCE
from .exceptions import ContractError, DimensionError, IndexRangeError, CheckpointError
from .numerics import save_tensors, load_tensors
from .timing import Timestamp, TimestampConstructionType, as_timestamp

__all__ = ["Codebook", "fit_codebook", "ChunkVocoder", "chunk_vocode"]

logger = logging.getLogger(__name__)


def _sq_distances(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    diff = points[:, None, :] - centroids[None, :, :]
    return (diff * diff).sum(axis=-1)


class Codebook(object):
    """An immutable table of code vectors.

    :param entries: [V_code, D_feat] code vectors
    :param hop: duration of one code, equal to the encoder frame hop
    :param max_fit_distance: largest distance from a training point to its code vector at fit time
    """

    def __init__(self, entries: np.ndarray, hop: TimestampConstructionType, max_fit_distance: float = 0.0):
        entries = np.array(entries, dtype=np.float64)
        if entries.ndim != 2 or entries.shape[0] < 1:
            raise DimensionError("codebook entries must be a non-empty [V, D] table", entries.shape)
        entries.setflags(write=False)
        self.__dict__["entries"] = entries
        self.__dict__["hop"] = as_timestamp(hop)
        self.__dict__["max_fit_distance"] = float(max_fit_distance)

        self.entries: np.ndarray
        self.hop: Timestamp
        self.max_fit_distance: float

    def __setattr__(self, name: str, value: Any) -> None:
        raise ContractError("Cannot assign to an immutable Codebook")

    @property
    def code_vocab(self) -> int:
        return self.entries.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.entries.shape[1]

    def _features(self, features: np.ndarray) -> np.ndarray:
        features = np.asarray(features, dtype=np.float64)
        if features.shape[-1] != self.feature_dim:
            raise DimensionError("feature dimension does not match the codebook", features.shape, self.entries.shape)
        return features

    def quantize(self, feature: np.ndarray) -> int:
        """Index of the nearest code vector; ties go to the lowest index"""
        feature = self._features(feature).reshape(1, -1)
        return int(np.argmin(_sq_distances(feature, self.entries)[0]))

    def quantize_sequence(self, features: np.ndarray) -> np.ndarray:
        features = self._features(features).reshape(-1, self.feature_dim)
        return np.argmin(_sq_distances(features, self.entries), axis=1).astype(np.int64)

    def dequantize(self, codes: Sequence[int]) -> np.ndarray:
        idx = np.asarray(codes, dtype=np.int64).reshape(-1)
        if np.any(idx < 0) or np.any(idx >= self.code_vocab):
            raise IndexRangeError("code index outside [0, {})".format(self.code_vocab))
        return self.entries[idx].copy()

    def to_tensors(self, prefix: str = "codebook.") -> Dict[str, np.ndarray]:
        return {prefix + "entries": self.entries,
                prefix + "hop_ns": np.array(float(self.hop.to_nanosec())),
                prefix + "max_fit_distance": np.array(self.max_fit_distance)}

    @classmethod
    def from_tensors(cls, tensors: Dict[str, np.ndarray], prefix: str = "codebook.") -> "Codebook":
        try:
            return cls(tensors[prefix + "entries"],
                       Timestamp.from_nanosec(int(tensors[prefix + "hop_ns"])),
                       float(tensors[prefix + "max_fit_distance"]))
        except KeyError as e:
            raise CheckpointError("Missing codebook record {}".format(e))

    def save(self, path: str) -> None:
        save_tensors(path, self.to_tensors())

    @classmethod
    def load(cls, path: str) -> "Codebook":
        return cls.from_tensors(load_tensors(path))

    def __eq__(self, other: object) -> bool:
        return (isinstance(other, Codebook) and self.hop == other.hop and
                np.array_equal(self.entries, other.entries) and self.max_fit_distance == other.max_fit_distance)

    def __repr__(self) -> str:
        return "Codebook(code_vocab={}, feature_dim={}, hop={})".format(self.code_vocab, self.feature_dim, self.hop)


def _kmeans_pp(points: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    centroids = [points[rng.integers(points.shape[0])]]
    for _ in range(1, n):
        d = _sq_distances(points, np.stack(centroids)).min(axis=1)
        centroids.append(points[rng.choice(points.shape[0], p=d / d.sum())])
    return np.stack(centroids)


def _stale(centroids: np.ndarray, assign: np.ndarray) -> List[int]:
    """Centroids with no members, and every repeat of an earlier centroid"""
    k = centroids.shape[0]
    counts = np.bincount(assign, minlength=k)
    _, first = np.unique(centroids, axis=0, return_index=True)
    repeat = np.ones(k, dtype=bool)
    repeat[first] = False
    return [c for c in range(k) if counts[c] == 0 or repeat[c]]


def _reseed(points: np.ndarray, centroids: np.ndarray, stale: Sequence[int], iteration: int) -> None:
    """Move each stale centroid onto the point farthest from all the other centroids.

    With at least as many distinct points as centroids that point is never on another centroid.
    """
    for c in stale:
        nearest = _sq_distances(points, np.delete(centroids, c, axis=0)).min(axis=1)
        far = int(np.argmax(nearest))
        logger.warning("k-means cluster %d empty or repeated at iteration %d; re-seeding from point %d",
                       c, iteration, far)
        centroids[c] = points[far]


def fit_codebook(features: np.ndarray, code_vocab: int, seed: int,
                 hop: TimestampConstructionType = Timestamp.from_millisec(40),
                 max_iter: int = KMEANS_MAX_ITER, tolerance: float = KMEANS_TOLERANCE) -> Codebook:
    """k-means with seeded k-means++ initialisation.

    Stops when no centroid moves by more than `tolerance` or after `max_iter` iterations. A cluster left empty, or
    whose centroid repeats another's, is re-seeded with the point farthest from every other centroid. The fitted
    code vectors are pairwise distinct and each is the nearest code of at least one training point.

    :raises ContractError: if there are fewer distinct points than codes
    """
    points = np.asarray(features, dtype=np.float64)
    if points.ndim != 2:
        raise DimensionError("features must be a [N, D] table", points.shape)
    distinct = np.unique(points, axis=0).shape[0]
    if distinct < code_vocab:
        raise ContractError("{} distinct points cannot fill {} codes".format(distinct, code_vocab))

    rng = np.random.default_rng(seed)
    centroids = _kmeans_pp(points, code_vocab, rng)
    converged = False
    for iteration in range(max_iter):
        assign = np.argmin(_sq_distances(points, centroids), axis=1)
        new = centroids.copy()
        for c in range(code_vocab):
            members = points[assign == c]
            if members.shape[0]:
                new[c] = members.mean(axis=0)
        _reseed(points, new, _stale(new, assign), iteration)
        movement = float(np.sqrt(((new - centroids) ** 2).sum(axis=1)).max())
        centroids = new
        logger.debug("k-means iteration %d: max centroid movement %g", iteration, movement)
        if movement <= tolerance:
            converged = True
            break
    if not converged:
        logger.warning("k-means stopped at the iteration cap of %d without converging", max_iter)

    # a re-seeded centroid sits on a point of its own, so this settles within code_vocab rounds
    for _ in range(code_vocab):
        stale = _stale(centroids, np.argmin(_sq_distances(points, centroids), axis=1))
        if not stale:
            break
        _reseed(points, centroids, stale, max_iter)

    dist = np.sqrt(_sq_distances(points, centroids).min(axis=1))
    logger.info("fitted %d codes to %d points, max distortion %g", code_vocab, points.shape[0], float(dist.max()))
    return Codebook(centroids, hop, float(dist.max()))


class ChunkVocoder(object):
    """Turns a stream of codes into feature chunks of chunk_size codes; flush releases a final short chunk"""

    def __init__(self, codebook: Codebook, chunk_size: int):
        if chunk_size < 1:
            raise ContractError("chunk_size must be at least 1, got {}".format(chunk_size))
        self.codebook = codebook
        self.chunk_size = chunk_size
        self._buffer: List[int] = []

    @property
    def buffered(self) -> int:
        return len(self._buffer)

    def push(self, code: int) -> Optional[np.ndarray]:
        self._buffer.append(int(code))
        if len(self._buffer) < self.chunk_size:
            return None
        return self.flush()

    def flush(self) -> Optional[np.ndarray]:
        if not self._buffer:
            return None
        chunk = self.codebook.dequantize(self._buffer)
        self._buffer = []
        return chunk


def chunk_vocode(codebook: Codebook, codes: Sequence[int], chunk_size: int) -> List[np.ndarray]:
    vocoder = ChunkVocoder(codebook, chunk_size)
    chunks = [c for c in (vocoder.push(code) for code in codes) if c is not None]
    tail = vocoder.flush()
    if tail is not None:
        chunks.append(tail)
    return chunks
