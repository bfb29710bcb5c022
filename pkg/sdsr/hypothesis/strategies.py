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

"""Hypothesis ( https://hypothesis.readthedocs.io/en/latest/ ) strategies generating the value types of this library:
timestamps, frame ranges, token and code sequences, joint lattices and frame sequences. They are of use when testing
code which depends upon sdsr.
"""

from typing import Any, Callable, Optional

import numpy as np
from hypothesis.extra.numpy import arrays
from hypothesis.strategies import SearchStrategy, composite, floats, integers, lists

from ..constants import BLANK_ID
from ..timing import Timestamp, FrameRange

__all__ = ["timestamps", "durations", "frameranges", "token_sequences", "code_sequences", "log_prob_lattices",
           "frame_sequences", "seeds"]

MIN_TIMESTAMP = Timestamp(1000000, 0, -1)
MAX_TIMESTAMP = Timestamp(1000000, 0)


def timestamps(min_value: Timestamp = MIN_TIMESTAMP, max_value: Timestamp = MAX_TIMESTAMP) -> SearchStrategy:
    """Timestamps between the given bounds. Shrinks towards zero."""
    return integers(min_value=min_value.to_nanosec(), max_value=max_value.to_nanosec()).map(Timestamp.from_nanosec)


def durations(max_value: Timestamp = Timestamp.from_sec_nsec("1:0")) -> SearchStrategy:
    """Non-negative timestamps, such as stage costs"""
    return timestamps(Timestamp(), max_value)


def frameranges(max_index: int = 1000) -> SearchStrategy:
    """Bounded, possibly empty, frame ranges within [0, max_index]. Shrinks towards short ranges near zero."""
    return (integers(min_value=0, max_value=max_index)
            .flatmap(lambda start: integers(min_value=0, max_value=max_index - start)
                     .map(lambda length: FrameRange.from_start_length(start, length))))


def token_sequences(vocab_size: int, min_size: int = 0, max_size: int = 8) -> SearchStrategy:
    """Token sequences that never contain the blank id"""
    return (lists(integers(min_value=BLANK_ID + 1, max_value=vocab_size - 1), min_size=min_size, max_size=max_size)
            .map(tuple))


def code_sequences(code_vocab: int, length: int) -> SearchStrategy:
    return lists(integers(min_value=0, max_value=code_vocab - 1), min_size=length, max_size=length)


@composite
def log_prob_lattices(draw: Callable[[SearchStrategy], Any], T: Optional[int] = None, U: Optional[int] = None,
                      V: Optional[int] = None) -> np.ndarray:
    """Row-normalised [T, U+1, V] log-probabilities from bounded scores"""
    T = draw(integers(1, 4)) if T is None else T
    U = draw(integers(0, 3)) if U is None else U
    V = draw(integers(2, 5)) if V is None else V
    scores = draw(arrays(np.float64, (T, U + 1, V), elements=floats(-4.0, 4.0)))
    m = scores.max(axis=-1, keepdims=True)
    return scores - m - np.log(np.exp(scores - m).sum(axis=-1, keepdims=True))


def frame_sequences(feature_dim: int, min_frames: int = 1, max_frames: int = 12) -> SearchStrategy:
    return integers(min_frames, max_frames).flatmap(
        lambda T: arrays(np.float64, (T, feature_dim), elements=floats(-2.0, 2.0)))


def seeds() -> SearchStrategy:
    return integers(min_value=0, max_value=2 ** 32 - 1)
