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

"""Session clocks for the streaming runtime.

Both clocks measure time relative to their own origin, so the first reading of a fresh clock is zero. The wall
clock reads the monotonic performance counter; the logical clock only moves when a stage is charged its configured
cost or when the session waits for an input frame, which makes latency reports reproducible.
"""

from abc import ABCMeta, abstractmethod
from contextlib import contextmanager
from typing import Dict, Iterator, Mapping, Optional

from ..exceptions import ContractError
from .timestamp import Timestamp, TimestampConstructionType, as_timestamp

__all__ = ["Clock", "WallClock", "LogicalClock", "StageSpan"]


class StageSpan(object):
    """Start and end of one stage invocation on a session clock"""

    def __init__(self, stage: str, start: Timestamp):
        self.stage = stage
        self.start = start
        self.end: Optional[Timestamp] = None

    @property
    def duration(self) -> Timestamp:
        if self.end is None:
            raise ContractError("Stage {!r} has not finished".format(self.stage))
        return self.end - self.start

    def __repr__(self) -> str:
        return "StageSpan({!r}, {}, {})".format(self.stage, self.start, self.end)


class Clock(metaclass=ABCMeta):
    """Common interface of the wall and logical clocks"""

    name = "abstract"

    @abstractmethod
    def now(self) -> Timestamp:
        ...

    @abstractmethod
    def wait_until(self, instant: TimestampConstructionType) -> Timestamp:
        """Block (or pretend to) until the given instant; returns the clock reading afterwards"""
        ...

    @abstractmethod
    @contextmanager
    def stage(self, name: str) -> Iterator[StageSpan]:
        """Time one stage invocation"""
        ...


class WallClock(Clock):
    """Reads the monotonic performance counter. Never sleeps: input is assumed to arrive as fast as it is fed."""

    name = "wall"

    def __init__(self) -> None:
        self._origin = Timestamp.get_time()

    def now(self) -> Timestamp:
        return Timestamp.get_time() - self._origin

    def wait_until(self, instant: TimestampConstructionType) -> Timestamp:
        return self.now()

    @contextmanager
    def stage(self, name: str) -> Iterator[StageSpan]:
        span = StageSpan(name, self.now())
        yield span
        span.end = self.now()


class LogicalClock(Clock):
    """A deterministic clock charging a configured cost per stage invocation.

    :param stage_costs: cost of one invocation of each named stage; unnamed stages cost nothing
    """

    name = "logical"

    def __init__(self, stage_costs: Optional[Mapping[str, TimestampConstructionType]] = None):
        self._now = Timestamp()
        self.stage_costs: Dict[str, Timestamp] = {
            k: as_timestamp(v) for k, v in (stage_costs or {}).items()}
        for k, v in self.stage_costs.items():
            if v < 0:
                raise ContractError("Stage cost for {!r} is negative: {}".format(k, v))

    def now(self) -> Timestamp:
        return self._now

    def wait_until(self, instant: TimestampConstructionType) -> Timestamp:
        instant = as_timestamp(instant)
        if instant > self._now:
            self._now = instant
        return self._now

    def cost_of(self, name: str) -> Timestamp:
        return self.stage_costs.get(name, Timestamp())

    @contextmanager
    def stage(self, name: str) -> Iterator[StageSpan]:
        span = StageSpan(name, self._now)
        yield span
        self._now = self._now + self.cost_of(name)
        span.end = self._now
