#!/usr/bin/python3
#
#   Copyright (C) 2023 Tullio Loffredo (@tulliolo)
#
#   It is subject to the license terms in the LICENSE file found in the top-level
#   directory of this distribution.
#
#   No part of this software, including this file, may be copied, modified,
#   propagated, or distributed except according to the terms contained in the
#   LICENSE file.
#   The above copyright notice and this permission notice shall be included in
#   all copies or substantial portions of the Software.
#
#   THE SOFTWARE IS PROVIDED "AS IS", WITHOUT WARRANTY OF ANY KIND, EXPRESS OR
#   IMPLIED, INCLUDING BUT NOT LIMITED TO THE WARRANTIES OF MERCHANTABILITY,
#   FITNESS FOR A PARTICULAR PURPOSE AND NONINFRINGEMENT. IN NO EVENT SHALL THE
#   AUTHORS OR COPYRIGHT HOLDERS BE LIABLE FOR ANY CLAIM, DAMAGES OR OTHER
#   LIABILITY, WHETHER IN AN ACTION OF CONTRACT, TORT OR OTHERWISE, ARISING
#   FROM, OUT OF OR IN CONNECTION WITH THE SOFTWARE OR THE USE OR OTHER
"""
The binary tensor container and the checkpoint file.

A tensor record (little-endian):

- magic "UDT1";
- u32 dtype code: 1 = float64, 2 = uint8;
- u32 rank, then one u32 per dimension;
- the row-major payload.

A checkpoint: magic "UDCK", a u32 length, that many bytes of UTF-8 JSON ({"config": ..., "names": [...]}) and one
tensor record per name, in the listed order.
"""
import enum
import json
import logging
import pathlib
from collections import OrderedDict
from typing import Dict, Tuple, Union

import numpy as np

from tulliolo.udmamba.errors import DataError, ParseError, fail

LOGGER = logging.getLogger(__name__)

TENSOR_MAGIC = b"UDT1"
CHECKPOINT_MAGIC = b"UDCK"
MAX_RANK = 8

_U32 = np.dtype("<u4")


class DType(enum.Enum):
    F64 = 1
    U8 = 2

    @property
    def numpy(self) -> np.dtype:
        return np.dtype("<f8") if self == DType.F64 else np.dtype("u1")

    @classmethod
    def of(cls, array: np.ndarray):
        if array.dtype == np.float64:
            return cls.F64
        if array.dtype == np.uint8:
            return cls.U8
        raise fail(LOGGER, DataError, "invalid tensor dtype", "expected: float64 or uint8", f"obtained: {array.dtype}")


def _u32(values) -> bytes:
    return np.asarray(values, dtype=_U32).tobytes()


def _read_u32(data: bytes, offset: int, count: int = 1) -> Tuple[np.ndarray, int]:
    end = offset + 4 * count
    if end > len(data):
        raise fail(
            LOGGER, ParseError,
            "truncated header",
            f"expected: {end - offset} bytes",
            f"obtained: {max(0, len(data) - offset)} bytes",
            f"offset: {offset}",
            offset=offset
        )
    return np.frombuffer(data, dtype=_U32, count=count, offset=offset).astype(np.int64), end


def write_tensor(array) -> bytes:
    """
    Encodes a float64 or uint8 array as a tensor record.
    :param array: the array
    :return:
    """
    array = np.asarray(array)
    dtype = DType.of(array)
    return (
        TENSOR_MAGIC + _u32([dtype.value, array.ndim]) + _u32(array.shape) +
        np.ascontiguousarray(array, dtype=dtype.numpy).tobytes()
    )


def read_tensor(data: bytes, offset: int = 0) -> Tuple[np.ndarray, int]:
    """
    Decodes the tensor record starting at offset.
    :param data: the bytes
    :param offset: the record offset
    :return: the array and the offset following the record
    """
    if data[offset:offset + 4] != TENSOR_MAGIC:
        raise fail(
            LOGGER, ParseError,
            "invalid tensor magic",
            f"expected: {TENSOR_MAGIC!r}",
            f"obtained: {data[offset:offset + 4]!r}",
            f"offset: {offset}",
            offset=offset
        )
    (code, rank), cursor = _read_u32(data, offset + 4, 2)
    try:
        dtype = DType(int(code))
    except ValueError:
        raise fail(
            LOGGER, ParseError,
            "invalid tensor dtype",
            "expected: 1 or 2",
            f"obtained: {code}",
            f"offset: {offset + 4}",
            offset=offset + 4
        )
    if rank > MAX_RANK:
        raise fail(
            LOGGER, ParseError,
            "invalid tensor rank",
            f"expected: <= {MAX_RANK}",
            f"obtained: {rank}",
            f"offset: {offset + 8}",
            offset=offset + 8
        )
    dims, cursor = _read_u32(data, cursor, int(rank))
    size = int(np.prod(dims)) * dtype.numpy.itemsize
    if cursor + size > len(data):
        raise fail(
            LOGGER, ParseError,
            "truncated payload",
            f"expected: {size} bytes",
            f"obtained: {len(data) - cursor} bytes",
            f"offset: {cursor}",
            offset=cursor
        )
    array = np.frombuffer(data, dtype=dtype.numpy, count=int(np.prod(dims)), offset=cursor)
    return array.reshape(tuple(int(d) for d in dims)).astype(dtype.numpy.newbyteorder("=")), cursor + size


def encode_checkpoint(config: dict, state: Dict[str, np.ndarray]) -> bytes:
    header = json.dumps({"config": config, "names": list(state)}, sort_keys=True).encode("utf-8")
    return (
        CHECKPOINT_MAGIC + _u32([len(header)]) + header +
        b"".join(write_tensor(np.asarray(value)) for value in state.values())
    )


def decode_checkpoint(data: bytes) -> Tuple[dict, Dict[str, np.ndarray]]:
    """
    Decodes a checkpoint.
    :param data: the file bytes
    :return: the config dict and the ordered {name: array} state
    """
    if data[:4] != CHECKPOINT_MAGIC:
        raise fail(
            LOGGER, ParseError,
            "invalid checkpoint magic",
            f"expected: {CHECKPOINT_MAGIC!r}",
            f"obtained: {data[:4]!r}",
            "offset: 0",
            offset=0
        )
    (length,), offset = _read_u32(data, 4)
    if offset + length > len(data):
        raise fail(
            LOGGER, ParseError,
            "truncated header",
            f"expected: {length} bytes",
            f"obtained: {len(data) - offset} bytes",
            f"offset: {offset}",
            offset=offset
        )
    try:
        header = json.loads(data[offset:offset + length].decode("utf-8"))
        config, names = header["config"], header["names"]
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError) as e:
        raise fail(
            LOGGER, ParseError,
            "invalid checkpoint header",
            "expected: JSON with config and names",
            f"obtained: {e}",
            f"offset: {offset}",
            offset=offset
        )
    offset += length
    state = OrderedDict()
    for name in names:
        state[name], offset = read_tensor(data, offset)
    if offset != len(data):
        raise fail(
            LOGGER, ParseError,
            "trailing bytes",
            f"expected: {offset} bytes",
            f"obtained: {len(data)} bytes",
            f"offset: {offset}",
            offset=offset
        )
    return config, state


def write_checkpoint(path: Union[str, pathlib.Path], config: dict, state: Dict[str, np.ndarray]):
    pathlib.Path(path).write_bytes(encode_checkpoint(config, state))


def read_checkpoint(path: Union[str, pathlib.Path]) -> Tuple[dict, Dict[str, np.ndarray]]:
    return decode_checkpoint(pathlib.Path(path).read_bytes())
