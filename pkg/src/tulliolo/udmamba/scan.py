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
The four pixel visiting orders of an uncertainty-driven scan, and the position-based (raster) baseline.

- p1: sequential, high to low uncertainty (the descending ranking itself);
- p2: skip, high to low: the ranking laid row-major on an H x W grid, read column by column (stride W);
- p3, p4: p1 and p2 reversed (low to high).
"""
from __future__ import annotations

import dataclasses
import enum
import io
import logging
from typing import Tuple

import numpy as np

from tulliolo.udmamba.errors import ShapeError, fail
from tulliolo.udmamba.uncertainty import (
    BlockUncertaintyConfig, SortResult, UncertaintyMetric,
    block_sort, channel_uncertainty, inverse_permutation, resolve_block_size
)

LOGGER = logging.getLogger(__name__)

BRANCH_COUNT = 4


class ScanMode(enum.Enum):
    """
    The source of the pixel orders:

    - uncertainty (DEFAULT): ranking by channel uncertainty;
    - raster: row-major and column-major positions, independent of the features.
    """
    UNCERTAINTY = DEFAULT = "uncertainty"
    RASTER = "raster"

    @property
    def description(self) -> str:
        return (
            "orders driven by the channel uncertainty ranking" if self == ScanMode.UNCERTAINTY else
            "row-major and column-major position orders"
        )


@dataclasses.dataclass
class ScanOrderSet:
    p1: np.ndarray
    p2: np.ndarray
    p3: np.ndarray
    p4: np.ndarray
    mode: ScanMode = ScanMode.DEFAULT
    skip_stride: int = 1

    @property
    def orders(self) -> Tuple[np.ndarray, ...]:
        return self.p1, self.p2, self.p3, self.p4

    def __getitem__(self, branch: int) -> np.ndarray:
        return self.orders[branch]

    def inverse(self, branch: int) -> np.ndarray:
        return inverse_permutation(self.orders[branch])


def column_major(height: int, width: int) -> np.ndarray:
    """
    The row-major positions of an H x W grid, listed column by column.
    :param height: the grid height
    :param width: the grid width
    :return:
    """
    return np.arange(height * width).reshape(height, width).T.reshape(-1)


def build_scan_orders(sort: SortResult, height: int, width: int) -> ScanOrderSet:
    """
    Builds the sequential and skip orders, in both directions, from a descending ranking.
    :param sort: the ranking (idx lists pixels from most to least uncertain)
    :param height: the map height
    :param width: the map width
    :return:
    """
    if len(sort.idx) != height * width:
        raise fail(
            LOGGER, ShapeError,
            "invalid ranking length",
            f"expected: {height * width}",
            f"obtained: {len(sort.idx)}"
        )
    p1 = np.asarray(sort.idx, dtype=np.int64)
    p2 = p1[column_major(height, width)]
    return ScanOrderSet(p1, p2, p1[::-1].copy(), p2[::-1].copy(), ScanMode.UNCERTAINTY, width)


def raster_orders(height: int, width: int) -> ScanOrderSet:
    """
    Builds the position-based orders: row-major, column-major and their reversals.
    :param height: the map height
    :param width: the map width
    :return:
    """
    p1 = np.arange(height * width, dtype=np.int64)
    p2 = column_major(height, width)
    return ScanOrderSet(p1, p2, p1[::-1].copy(), p2[::-1].copy(), ScanMode.RASTER, width)


def scan_orders_for(
        x,
        metric: UncertaintyMetric = UncertaintyMetric.DEFAULT,
        block_cfg: BlockUncertaintyConfig = None,
        mode: ScanMode = ScanMode.DEFAULT
) -> ScanOrderSet:
    """
    The routing step of one sample: uncertainty, ranking (pixel or block level) and the four orders.
    :param x: C x H x W features
    :param metric: the uncertainty statistic
    :param block_cfg: the ranking region
    :param mode: uncertainty-driven or raster
    :return:
    """
    _, height, width = np.shape(getattr(x, "data", x))
    if ScanMode(mode) == ScanMode.RASTER:
        return raster_orders(height, width)

    block_cfg = block_cfg or BlockUncertaintyConfig()
    u = channel_uncertainty(x, metric)
    a = resolve_block_size(block_cfg, height)
    return build_scan_orders(block_sort(u, a), height, width)


def scan_orders_to_csv(orders: ScanOrderSet, width: int) -> str:
    """
    Dumps the orders as "branch,step,pixel_row,pixel_col" rows (branches numbered 1 to 4).
    :param orders: the orders
    :param width: the map width
    :return: the csv text
    """
    buffer = io.StringIO()
    buffer.write("branch,step,pixel_row,pixel_col\n")
    for branch, order in enumerate(orders.orders, start=1):
        rows, cols = np.divmod(order, width)
        for step, (row, col) in enumerate(zip(rows, cols)):
            buffer.write(f"{branch},{step},{row},{col}\n")
    return buffer.getvalue()
