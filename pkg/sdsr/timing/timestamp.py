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

"""Exact nanosecond time values for session clocks, frame hops and stage costs."""

from datetime import datetime, timedelta
from fractions import Fraction
from typing import Union
import time

from dateutil import tz

from ..constants import MAX_NANOSEC
from ..exceptions import SdsrError

__all__ = ["Timestamp", "as_timestamp", "TimestampConstructionType"]


TimestampConstructionType = Union["Timestamp", int, float]


def as_timestamp(v: TimestampConstructionType) -> "Timestamp":
    """Coerce a Timestamp, an int number of nanoseconds or a float number of seconds to a Timestamp

    :raises ValueError: for anything else, booleans included
    """
    if isinstance(v, Timestamp):
        return v
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ValueError("{!r} cannot be converted to a Timestamp".format(v))
    if isinstance(v, int):
        return Timestamp.from_nanosec(v)
    return Timestamp.from_float(v)


class Timestamp(object):
    """A signed, immutable time value held as a whole number of nanoseconds.

    The same type is an instant on a session clock and a duration such as a frame hop or a stage cost. Sums,
    differences and integer multiples are exact, so a logical clock reproduces the same readings on every run.

    The text form is seconds:nanoseconds, e.g. "-1:500000000" for minus one and a half seconds.
    """

    def __init__(self, sec: int = 0, ns: int = 0, sign: int = 1):
        self.__dict__["_ns"] = (-1 if sign < 0 else 1) * (int(sec) * MAX_NANOSEC + int(ns))
        self._ns: int

    def __setattr__(self, name: str, value: object) -> None:
        raise SdsrError("Cannot assign to an immutable Timestamp")

    @property
    def sec(self) -> int:
        return abs(self._ns) // MAX_NANOSEC

    @property
    def ns(self) -> int:
        return abs(self._ns) % MAX_NANOSEC

    @classmethod
    def get_time(cls) -> "Timestamp":
        """A reading of the monotonic performance counter; only differences between readings mean anything"""
        return cls.from_nanosec(time.perf_counter_ns())

    @classmethod
    def get_wall_time(cls) -> "Timestamp":
        """Unix time now"""
        return cls.from_nanosec(time.time_ns())

    @classmethod
    def from_nanosec(cls, nanosec: int) -> "Timestamp":
        return cls(ns=nanosec)

    @classmethod
    def from_millisec(cls, millisec: int) -> "Timestamp":
        return cls(ns=millisec * 1000000)

    @classmethod
    def from_float(cls, seconds: float) -> "Timestamp":
        """Seconds as a float, rounded to the nearest nanosecond"""
        return cls(ns=int(round(abs(seconds) * MAX_NANOSEC)), sign=-1 if seconds < 0 else 1)

    @classmethod
    def from_sec_nsec(cls, text: str) -> "Timestamp":
        parts = text.split(":")
        if len(parts) > 2:
            raise SdsrError("{!r} is not of the form seconds:nanoseconds".format(text))
        try:
            sec = int(parts[0])
            ns = int(parts[1]) if len(parts) == 2 else 0
        except ValueError:
            raise SdsrError("{!r} is not of the form seconds:nanoseconds".format(text))
        return cls(abs(sec), ns, -1 if parts[0].strip().startswith("-") else 1)

    def to_nanosec(self) -> int:
        return self._ns

    def to_sec_nsec(self) -> str:
        return "{}{}:{}".format("-" if self._ns < 0 else "", self.sec, self.ns)

    def to_float(self) -> float:
        return self._ns / MAX_NANOSEC

    def to_datetime(self) -> datetime:
        """This value as unix time, an aware UTC datetime rounded to the nearest microsecond (halves up)"""
        return datetime.fromtimestamp(0, tz.tzutc()) + timedelta(microseconds=(2 * self._ns + 1000) // 2000)

    def to_iso8601_utc(self) -> str:
        return self.to_datetime().strftime("%Y-%m-%dT%H:%M:%S.%fZ")

    def ratio(self, other: TimestampConstructionType) -> float:
        """self / other as a float, from the exact nanosecond counts"""
        den = as_timestamp(other)._ns
        if den == 0:
            raise SdsrError("Cannot take a ratio with a zero Timestamp")
        return float(Fraction(self._ns, den))

    def compare(self, other: TimestampConstructionType) -> int:
        diff = self._ns - as_timestamp(other)._ns
        return (diff > 0) - (diff < 0)

    def __str__(self) -> str:
        return self.to_sec_nsec()

    def __repr__(self) -> str:
        return "sdsr.timing.Timestamp.from_sec_nsec({!r})".format(self.to_sec_nsec())

    def __hash__(self) -> int:
        return hash(self._ns)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, (Timestamp, int, float)) or isinstance(other, bool):
            return False
        return self.compare(other) == 0

    def __lt__(self, other: TimestampConstructionType) -> bool:
        return self.compare(other) < 0

    def __le__(self, other: TimestampConstructionType) -> bool:
        return self.compare(other) <= 0

    def __gt__(self, other: TimestampConstructionType) -> bool:
        return self.compare(other) > 0

    def __ge__(self, other: TimestampConstructionType) -> bool:
        return self.compare(other) >= 0

    def __add__(self, other: TimestampConstructionType) -> "Timestamp":
        return Timestamp(ns=self._ns + as_timestamp(other)._ns)

    __radd__ = __add__

    def __sub__(self, other: TimestampConstructionType) -> "Timestamp":
        return Timestamp(ns=self._ns - as_timestamp(other)._ns)

    def __mul__(self, n: int) -> "Timestamp":
        return Timestamp(ns=self._ns * n)

    __rmul__ = __mul__
