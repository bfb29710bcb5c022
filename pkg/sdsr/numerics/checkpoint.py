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

"""The flat binary container used for checkpoints, codebooks and corpus records.

Layout, all integers little-endian:

    b"SDSR"  u32 version
    then, repeated to the end of the data:
        u32 name length, UTF-8 name, u32 rank, rank x u64 dims, prod(dims) x f64 values

Values are written and read as raw IEEE doubles so a round trip is bit-exact.
"""

import logging
import os
import struct
from collections import OrderedDict
from typing import Dict, Mapping, Union

import numpy as np

from ..constants import CHECKPOINT_MAGIC, CHECKPOINT_VERSION
from ..exceptions import CheckpointError

__all__ = ["dumps_tensors", "loads_tensors", "save_tensors", "load_tensors"]

logger = logging.getLogger(__name__)

PathType = Union[str, "os.PathLike[str]"]

_HEADER = struct.Struct("<4sI")
_U32 = struct.Struct("<I")


def dumps_tensors(tensors: Mapping[str, np.ndarray]) -> bytes:
    parts = [_HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION)]
    for name, values in tensors.items():
        arr = np.asarray(values, dtype="<f8")
        encoded = name.encode("utf-8")
        parts.append(_U32.pack(len(encoded)))
        parts.append(encoded)
        parts.append(_U32.pack(arr.ndim))
        parts.append(struct.pack("<{}Q".format(arr.ndim), *arr.shape))
        parts.append(np.ascontiguousarray(arr).tobytes())
    return b"".join(parts)


def loads_tensors(data: bytes) -> Dict[str, np.ndarray]:
    """Parse a container

    :raises CheckpointError: on a bad magic number, unknown version, truncated record or repeated name
    """
    if len(data) < _HEADER.size:
        raise CheckpointError("Container is too short to hold a header")
    magic, version = _HEADER.unpack_from(data, 0)
    if magic != CHECKPOINT_MAGIC:
        raise CheckpointError("Bad magic bytes {!r}".format(magic))
    if version != CHECKPOINT_VERSION:
        raise CheckpointError("Unsupported container version {}".format(version))

    out: Dict[str, np.ndarray] = OrderedDict()
    pos = _HEADER.size
    try:
        while pos < len(data):
            (name_len,) = _U32.unpack_from(data, pos)
            pos += _U32.size
            name = data[pos:pos + name_len].decode("utf-8")
            if len(name.encode("utf-8")) != name_len:
                raise CheckpointError("Truncated record name")
            pos += name_len
            (rank,) = _U32.unpack_from(data, pos)
            pos += _U32.size
            dims = struct.unpack_from("<{}Q".format(rank), data, pos)
            pos += 8 * rank
            count = int(np.prod(dims, dtype=np.int64)) if rank else 1
            if pos + 8 * count > len(data):
                raise CheckpointError("Truncated values for {!r}".format(name))
            values = np.frombuffer(data, dtype="<f8", count=count, offset=pos).reshape(dims)
            pos += 8 * count
            if name in out:
                raise CheckpointError("Repeated record name {!r}".format(name))
            out[name] = values.astype(np.float64)
    except struct.error as e:
        raise CheckpointError("Truncated container: {}".format(e))
    except UnicodeDecodeError as e:
        raise CheckpointError("Record name is not UTF-8: {}".format(e))
    return out


def save_tensors(path: PathType, tensors: Mapping[str, np.ndarray]) -> None:
    data = dumps_tensors(tensors)
    with open(path, "wb") as f:
        f.write(data)
    logger.debug("wrote %d tensors (%d bytes) to %s", len(tensors), len(data), path)


def load_tensors(path: PathType) -> Dict[str, np.ndarray]:
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as e:
        raise CheckpointError("Cannot read {}: {}".format(path, e))
    return loads_tensors(data)
