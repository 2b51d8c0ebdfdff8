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
The error kinds raised by the package.

All errors carry a tuple of human readable strings, the first being a short, stable reason:
("invalid shape", "expected: ...", "obtained: ...").
"""
from __future__ import annotations

import logging


class ShapeError(ValueError):
    """Tensor extents do not match the operation contract."""


class PermutationError(ValueError):
    """An index list is not a bijection over the expected range."""


class ConfigError(ValueError):
    """A configuration value is out of its allowed domain."""


class DataError(ValueError):
    """Input data violates the operation contract (e.g. class index out of range)."""


class ContractError(ValueError):
    """An API precondition is violated (e.g. backward from a non-scalar)."""


class ParseError(ValueError):
    """A file could not be parsed; `offset` is the byte offset of the failure."""

    def __init__(self, *args, offset: int = 0):
        super().__init__(*args)
        self.offset = offset


class NumericError(ArithmeticError):
    """A NaN or infinite value was produced or received."""


def fail(logger: logging.Logger, error: type, *args: str, **kwargs) -> Exception:
    """
    Logs the error args, joined by " | ", and returns the exception ready to be raised.
    :param logger: the module logger
    :param error: the exception class
    :param args: the error args, reason first
    :return: the exception instance
    """
    logger.error(" | ".join(str(arg) for arg in args))
    return error(*args, **kwargs)
