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

"""All exceptions in this library descend from SdsrError
"""

from typing import Dict, Optional, Sequence


class SdsrError(Exception):
    """ Raised when an input or internal state is invalid """
    def __init__(self, msg: str):
        super().__init__(msg)
        self.msg = msg


class DimensionError(SdsrError, ValueError):
    """ Raised when two shapes that must agree do not """
    def __init__(self, msg: str, *shapes: Sequence[int]):
        if shapes:
            msg = "{}: {}".format(msg, " vs ".join(str(tuple(s)) for s in shapes))
        super().__init__(msg)
        self.shapes = tuple(tuple(s) for s in shapes)


class NumericError(SdsrError, ArithmeticError):
    """ Raised when a value is not finite """
    pass


class ContractError(SdsrError):
    """ Raised when a pre-condition or calling protocol is violated """
    pass


class IndexRangeError(SdsrError, IndexError):
    """ Raised when a class, token or code index is out of range """
    pass


class ConfigError(SdsrError):
    """ Raised when a configuration document is invalid """
    pass


class CheckpointError(SdsrError):
    """ Raised when a checkpoint or corpus container cannot be read """
    pass


class DivergenceError(SdsrError):
    """ Raised when a training loss stops being finite """
    def __init__(self, msg: str, step: int, losses: Optional[Dict[str, float]] = None):
        super().__init__(msg)
        self.step = step
        self.losses = dict(losses or {})
