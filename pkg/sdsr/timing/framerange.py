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

from typing import Any, Iterator

__all__ = ["FrameRange"]


class FrameRange(object):
    """An immutable, half-open range of integer frame, code or position indices.

    `start` is the first index in the range and `end` the first index after it. Every empty range compares equal to
    never(). The text form is "[3_7)" for indices 3 to 6, "[3]" for index 3 alone and "()" when empty.
    """

    def __init__(self, start: int, end: int):
        if start >= end:
            start, end = 0, 0
        self.__dict__["start"] = int(start)
        self.__dict__["end"] = int(end)

        self.start: int
        self.end: int

    def __setattr__(self, name: str, value: Any) -> None:
        raise ValueError("Cannot assign to an immutable FrameRange")

    @classmethod
    def from_start_length(cls, start: int, length: int) -> "FrameRange":
        """The `length` indices from start onwards

        :raises ValueError: if length is negative
        """
        if length < 0:
            raise ValueError("Length must be non-negative, got {}".format(length))
        return cls(start, start + length)

    @classmethod
    def never(cls) -> "FrameRange":
        return cls(0, 0)

    def to_str(self) -> str:
        if self.is_empty():
            return "()"
        if self.length == 1:
            return "[{}]".format(self.start)
        return "[{}_{})".format(self.start, self.end)

    def is_empty(self) -> bool:
        return self.start == self.end

    @property
    def length(self) -> int:
        return self.end - self.start

    @property
    def first(self) -> int:
        if self.is_empty():
            raise ValueError("The empty range has no first index")
        return self.start

    @property
    def last(self) -> int:
        if self.is_empty():
            raise ValueError("The empty range has no last index")
        return self.end - 1

    def __len__(self) -> int:
        return self.length

    def __iter__(self) -> Iterator[int]:
        return iter(range(self.start, self.end))

    def __contains__(self, index: int) -> bool:
        return self.start <= index < self.end

    def __eq__(self, other: Any) -> bool:
        return isinstance(other, FrameRange) and (self.start, self.end) == (other.start, other.end)

    def __hash__(self) -> int:
        return hash((self.start, self.end))

    def __str__(self) -> str:
        return self.to_str()

    def __repr__(self) -> str:
        return "sdsr.timing.FrameRange({}, {})".format(self.start, self.end)
