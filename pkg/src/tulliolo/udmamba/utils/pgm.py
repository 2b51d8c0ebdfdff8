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
8-bit grayscale binary PGM (P5, maxval 255) encoding and decoding.
"""
import io
import logging
import pathlib
from typing import Tuple, Union

import numpy as np
from PIL import Image

from tulliolo.udmamba.errors import DataError, ParseError, fail

LOGGER = logging.getLogger(__name__)

MAGIC = b"P5"
MAXVAL = 255
WHITESPACE = b" \t\n\r\v\f"


def write_pgm(image) -> bytes:
    """
    Encodes an H x W uint8 image.
    :param image: the image
    :return: the file bytes
    """
    image = np.asarray(image)
    if image.ndim != 2 or image.dtype != np.uint8:
        raise fail(
            LOGGER, DataError,
            "invalid pgm image",
            "expected: H x W uint8",
            f"obtained: {image.shape} {image.dtype}"
        )
    buffer = io.BytesIO()
    Image.fromarray(np.ascontiguousarray(image)).save(buffer, format="PPM")
    return buffer.getvalue()


def _parse_header(data: bytes) -> Tuple[int, int, int]:
    """
    Parses the P5 header: magic, width, height and maxval separated by whitespace (and comments), followed by a single
    whitespace byte.
    :param data: the file bytes
    :return: width, height and the payload offset
    """
    if data[:2] != MAGIC:
        raise fail(
            LOGGER, ParseError,
            "invalid pgm magic",
            "expected: P5",
            f"obtained: {data[:2]!r}",
            "offset: 0",
            offset=0
        )
    offset = 2
    fields = []
    while len(fields) < 3:
        start = offset
        while offset < len(data) and (data[offset] in WHITESPACE or data[offset:offset + 1] == b"#"):
            if data[offset:offset + 1] == b"#":
                while offset < len(data) and data[offset:offset + 1] != b"\n":
                    offset += 1
            offset += 1
        if offset == start:
            raise fail(
                LOGGER, ParseError,
                "invalid pgm header",
                "expected: whitespace",
                f"obtained: {data[offset:offset + 1]!r}",
                f"offset: {offset}",
                offset=offset
            )
        start = offset
        while offset < len(data) and data[offset:offset + 1].isdigit():
            offset += 1
        if offset == start:
            raise fail(
                LOGGER, ParseError,
                "invalid pgm header",
                "expected: a decimal number",
                f"obtained: {data[offset:offset + 1]!r}",
                f"offset: {offset}",
                offset=offset
            )
        fields.append(int(data[start:offset]))

    width, height, maxval = fields
    if maxval != MAXVAL or width < 1 or height < 1:
        raise fail(
            LOGGER, ParseError,
            "invalid pgm header",
            f"expected: positive size, maxval {MAXVAL}",
            f"obtained: {width} x {height}, maxval {maxval}",
            f"offset: {offset}",
            offset=offset
        )
    if offset >= len(data) or data[offset] not in WHITESPACE:
        raise fail(
            LOGGER, ParseError,
            "invalid pgm header",
            "expected: a whitespace after maxval",
            f"obtained: {data[offset:offset + 1]!r}",
            f"offset: {offset}",
            offset=offset
        )
    return width, height, offset + 1


def read_pgm(data: bytes) -> np.ndarray:
    """
    Decodes a P5 file.
    :param data: the file bytes
    :return: the H x W uint8 image
    """
    width, height, offset = _parse_header(data)
    expected = width * height
    obtained = len(data) - offset
    if obtained != expected:
        raise fail(
            LOGGER, ParseError,
            "invalid pgm payload",
            f"expected: {expected} bytes",
            f"obtained: {obtained} bytes",
            f"offset: {offset + min(obtained, expected)}",
            offset=offset + min(obtained, expected)
        )
    with Image.open(io.BytesIO(data)) as image:
        return np.array(image, dtype=np.uint8)


def write_pgm_file(path: Union[str, pathlib.Path], image):
    pathlib.Path(path).write_bytes(write_pgm(image))


def read_pgm_file(path: Union[str, pathlib.Path]) -> np.ndarray:
    return read_pgm(pathlib.Path(path).read_bytes())


def normalize_to_uint8(values) -> np.ndarray:
    """
    Min-max scales a map to 0..255; a constant map becomes all zeros.
    :param values: the map
    :return:
    """
    values = np.asarray(values, dtype=np.float64)
    low, high = float(values.min()), float(values.max())
    if high <= low:
        return np.zeros(values.shape, dtype=np.uint8)
    return np.round((values - low) / (high - low) * MAXVAL).astype(np.uint8)
