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

"""Exact time and index arithmetic for the streaming runtime.

Timestamp stores a signed nanosecond count and is used for frame hops, stage costs and clock readings.
FrameRange stores a half-open range of integer indices and is used for wait-k visibility sets and vocoder chunk
extents.
"""

from .timestamp import Timestamp, as_timestamp, TimestampConstructionType
from .framerange import FrameRange
from .clock import Clock, WallClock, LogicalClock, StageSpan

__all__ = [
    "Timestamp", "as_timestamp", "TimestampConstructionType",
    "FrameRange",
    "Clock", "WallClock", "LogicalClock", "StageSpan"]
