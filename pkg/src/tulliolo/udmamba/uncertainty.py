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
Channel uncertainty: a per-pixel dispersion statistic across feature channels, the pixel ranking it induces and its
pooled (a x a block) variants.
"""
from __future__ import annotations

import dataclasses
import enum
import io
import logging
from typing import Optional

import numpy as np

from tulliolo.udmamba.errors import ConfigError, NumericError, ShapeError, fail

LOGGER = logging.getLogger(__name__)


class UncertaintyMetric(enum.Enum):
    """
    The dispersion statistic computed across the channels of every pixel:

    - std (DEFAULT): population standard deviation;
    - mad: mean absolute deviation from the channel mean;
    - variance: population variance;
    - entropy: Shannon entropy of the channel softmax;
    - range: negated margin between the two highest channel values.
    """
    STD = DEFAULT = "std"
    MAD = "mad"
    VARIANCE = "variance"
    ENTROPY = "entropy"
    RANGE = "range"

    @property
    def description(self) -> str:
        return (
            "population standard deviation across channels" if self == UncertaintyMetric.STD else
            "mean absolute deviation across channels" if self == UncertaintyMetric.MAD else
            "population variance across channels" if self == UncertaintyMetric.VARIANCE else
            "entropy of the channel softmax" if self == UncertaintyMetric.ENTROPY else
            "negated margin between the two highest channels"
        )

    def __call__(self, x: np.ndarray) -> np.ndarray:
        """
        Computes the statistic over axis 0 of a C x H x W array.
        :param x: the features
        :return: the H x W values
        """
        if self == UncertaintyMetric.ENTROPY:
            shifted = x - np.max(x, axis=0, keepdims=True)
            logp = shifted - np.log(np.sum(np.exp(shifted), axis=0, keepdims=True))
            return -np.sum(np.exp(logp) * logp, axis=0)
        if self == UncertaintyMetric.RANGE:
            if x.shape[0] == 1:
                return np.zeros(x.shape[1:])
            top = np.sort(x, axis=0)
            return -(top[-1] - top[-2])

        deviation = x - np.mean(x, axis=0, keepdims=True)
        if self == UncertaintyMetric.MAD:
            return np.mean(np.abs(deviation), axis=0)
        variance = np.mean(deviation * deviation, axis=0)
        return variance if self == UncertaintyMetric.VARIANCE else np.sqrt(variance)


class BlockMode(enum.Enum):
    """
    The region over which uncertainty is ranked:

    - pixel (DEFAULT): every pixel on its own (a = 1);
    - static: fixed a x a blocks;
    - dynamic-proportional: a = a_v / a_v_min, growing with the feature extent;
    - dynamic-inverse: a = a_v_max / a_v, shrinking with the feature extent.
    """
    PIXEL = DEFAULT = "pixel"
    STATIC = "static"
    DYNAMIC_PROPORTIONAL = "dynamic-proportional"
    DYNAMIC_INVERSE = "dynamic-inverse"

    @property
    def description(self) -> str:
        return (
            "pixel-level ranking" if self == BlockMode.PIXEL else
            "fixed a x a blocks" if self == BlockMode.STATIC else
            "blocks growing with the feature extent" if self == BlockMode.DYNAMIC_PROPORTIONAL else
            "blocks shrinking with the feature extent"
        )


@dataclasses.dataclass
class UncertaintyMap:
    values: np.ndarray
    metric: UncertaintyMetric = UncertaintyMetric.DEFAULT

    @property
    def shape(self):
        return self.values.shape


@dataclasses.dataclass
class SortResult:
    """
    The descending ranking of a map: sorted_values[k] is the value of pixel idx[k] (row-major index).
    """
    sorted_values: np.ndarray
    idx: np.ndarray

    def __len__(self) -> int:
        return len(self.idx)


@dataclasses.dataclass
class BlockUncertaintyConfig:
    mode: BlockMode = BlockMode.DEFAULT
    a: int = 1
    a_v_max: Optional[int] = None
    a_v_min: Optional[int] = None

    @classmethod
    def from_dict(cls, value: dict) -> BlockUncertaintyConfig:
        value = dict(value)
        value["mode"] = BlockMode(value.get("mode", BlockMode.DEFAULT.value))
        return cls(**value)

    @property
    def info(self) -> dict:
        return {"mode": self.mode.value, "a": self.a, "a_v_max": self.a_v_max, "a_v_min": self.a_v_min}


def channel_uncertainty(x, metric: UncertaintyMetric = UncertaintyMetric.DEFAULT) -> UncertaintyMap:
    """
    Computes the per-pixel uncertainty of a C x H x W feature map.
    :param x: the features (array or tensor)
    :param metric: the statistic
    :return:
    """
    x = np.asarray(getattr(x, "data", x), dtype=np.float64)
    if x.ndim != 3 or x.shape[0] < 1:
        raise fail(
            LOGGER, ShapeError,
            "invalid feature shape",
            "expected: (C >= 1, H, W)",
            f"obtained: {x.shape}"
        )
    if not np.all(np.isfinite(x)):
        raise fail(
            LOGGER, NumericError,
            "non-finite value",
            "operation: channel_uncertainty",
            f"obtained: {int(np.count_nonzero(~np.isfinite(x)))} non-finite features"
        )
    metric = UncertaintyMetric(metric)
    return UncertaintyMap(metric(x), metric)


def sort_descending(u: UncertaintyMap) -> SortResult:
    """
    Ranks the pixels by decreasing uncertainty; ties keep the ascending row-major order.
    :param u: the uncertainty map
    :return:
    """
    values = np.asarray(u.values, dtype=np.float64).reshape(-1)
    if np.any(np.isnan(values)):
        raise fail(
            LOGGER, NumericError,
            "non-finite value",
            "operation: sort_descending",
            f"obtained: {int(np.count_nonzero(np.isnan(values)))} NaN values"
        )
    idx = np.argsort(-values, kind="stable")
    return SortResult(values[idx], idx)


def inverse_permutation(idx: np.ndarray) -> np.ndarray:
    inverse = np.empty_like(idx)
    inverse[idx] = np.arange(len(idx), dtype=idx.dtype)
    return inverse


def resolve_block_size(cfg: BlockUncertaintyConfig, extent: int) -> int:
    """
    Resolves the block side for a feature map of the given extent; a block never exceeds the map.
    :param cfg: the block configuration
    :param extent: the feature extent a_v
    :return: the block side a >= 1
    """
    if cfg.mode == BlockMode.PIXEL:
        return 1
    if cfg.mode == BlockMode.STATIC:
        a = cfg.a
    else:
        if not cfg.a_v_max or not cfg.a_v_min:
            raise fail(
                LOGGER, ConfigError,
                "invalid block config",
                "expected: a_v_max and a_v_min for dynamic modes",
                f"obtained: {cfg.a_v_max}, {cfg.a_v_min}"
            )
        a = extent // cfg.a_v_min if cfg.mode == BlockMode.DYNAMIC_PROPORTIONAL else cfg.a_v_max // extent
    a = min(max(1, int(a)), extent)
    if extent % a:
        raise fail(
            LOGGER, ConfigError,
            "invalid block size",
            f"expected: a divisor of {extent}",
            f"obtained: {a}"
        )
    return a


def block_pool_uncertainty(u: UncertaintyMap, cfg: BlockUncertaintyConfig) -> UncertaintyMap:
    """
    Replaces every a x a block by its mean.
    :param u: the pixel-level map
    :param cfg: the block configuration (a resolved against the map height)
    :return: the coarse (H/a x W/a) map
    """
    height, width = u.shape
    a = resolve_block_size(cfg, height)
    if height % a or width % a:
        raise fail(
            LOGGER, ConfigError,
            "invalid block size",
            f"expected: a divisor of {height} and {width}",
            f"obtained: {a}"
        )
    pooled = u.values.reshape(height // a, a, width // a, a).mean(axis=(1, 3))
    return UncertaintyMap(pooled, u.metric)


def block_sort(u: UncertaintyMap, a: int) -> SortResult:
    """
    Ranks the a x a blocks of a map by their mean, then lists the pixels block by block (row-major inside a block).
    :param u: the pixel-level map
    :param a: the block side
    :return: the pixel-level ranking
    """
    height, width = u.shape
    if a == 1:
        return sort_descending(u)
    coarse = block_pool_uncertainty(u, BlockUncertaintyConfig(BlockMode.STATIC, a))
    ranking = sort_descending(coarse)

    cols = width // a
    block_rows, block_cols = np.divmod(ranking.idx, cols)
    inner_rows, inner_cols = np.divmod(np.arange(a * a), a)
    rows = block_rows[:, None] * a + inner_rows[None, :]
    cols_ = block_cols[:, None] * a + inner_cols[None, :]
    idx = (rows * width + cols_).reshape(-1)
    return SortResult(np.repeat(ranking.sorted_values, a * a), idx)


def uncertainty_to_csv(u: UncertaintyMap) -> str:
    """
    Dumps a map as "row,col,value" rows.
    :param u: the map
    :return: the csv text
    """
    buffer = io.StringIO()
    buffer.write("row,col,value\n")
    for (row, col), value in np.ndenumerate(u.values):
        buffer.write(f"{row},{col},{float(value)!r}\n")
    return buffer.getvalue()
