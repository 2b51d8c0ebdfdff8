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
A collection of common utils: JSON config overrides and CSV writing.
"""
import json
import logging
import pathlib
from typing import Iterable, List, Sequence, Union

from tulliolo.udmamba.errors import ConfigError, fail

LOGGER = logging.getLogger(__name__)


def parse_value(text: str):
    """
    Parses a cli value as JSON, falling back to the raw string.
    A comma separated list of numbers is parsed as a list.
    :param text: the value text
    :return:
    """
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        pass
    if "," in text:
        return [parse_value(item.strip()) for item in text.split(",")]
    return text


def parse_overrides(tokens: Sequence[str]) -> dict:
    """
    Parses "--key value" and "--key=value" pairs into a {dotted key: value} dict.
    :param tokens: the unparsed cli tokens
    :return:
    """
    overrides = {}
    tokens = list(tokens)
    while tokens:
        token = tokens.pop(0)
        if not token.startswith("--") or len(token) < 3:
            raise fail(LOGGER, ConfigError, "invalid override", "expected: --key value", f"obtained: {token}")
        key, sep, value = token[2:].partition("=")
        if not sep:
            if not tokens:
                raise fail(LOGGER, ConfigError, "invalid override", "expected: --key value", f"obtained: {token}")
            value = tokens.pop(0)
        overrides[key.replace("-", "_")] = parse_value(value)
    return overrides


def apply_overrides(config: dict, overrides: dict) -> dict:
    """
    Sets dotted keys (e.g. "network.seed") on a nested config dict, creating sections as needed.
    :param config: the config dict (modified in place)
    :param overrides: the {dotted key: value} overrides
    :return: the config dict
    """
    for key, value in overrides.items():
        section = config
        *path, leaf = key.split(".")
        for name in path:
            child = section.setdefault(name, {})
            if not isinstance(child, dict):
                raise fail(LOGGER, ConfigError, "invalid override", "expected: a config section", f"obtained: {key}")
            section = child
        section[leaf] = value
    return config


def load_config(path: Union[str, pathlib.Path, None], overrides: dict = None) -> dict:
    """
    Loads a JSON config file (an empty config when path is None) and applies the overrides.
    :param path: the config file
    :param overrides: the {dotted key: value} overrides
    :return:
    """
    config = {}
    if path is not None:
        with open(path) as file:
            try:
                config = json.load(file)
            except json.JSONDecodeError as e:
                raise fail(LOGGER, ConfigError, "invalid config file", f"path: {path}", f"obtained: {e}")
        if not isinstance(config, dict):
            raise fail(LOGGER, ConfigError, "invalid config file", "expected: a JSON object", f"path: {path}")
    return apply_overrides(config, overrides or {})


def csv_line(values: Iterable) -> str:
    return ",".join(repr(float(v)) if isinstance(v, float) else str(v) for v in values) + "\n"


def append_csv(path: Union[str, pathlib.Path], header: Sequence[str], rows: List[Sequence]):
    """
    Appends rows to a CSV file, writing the header when the file is new.
    :param path: the file
    :param header: the column names
    :param rows: the rows
    :return:
    """
    path = pathlib.Path(path)
    new = not path.exists() or path.stat().st_size == 0
    with open(path, "a") as file:
        if new:
            file.write(",".join(header) + "\n")
        for row in rows:
            file.write(csv_line(row))
