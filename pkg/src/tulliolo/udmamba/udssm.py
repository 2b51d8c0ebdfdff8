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
The uncertainty-driven selective scan module (UD-SSM):
uncertainty -> ranking -> four orders -> gather -> reweight -> S6 -> recover -> sum.
"""
from __future__ import annotations

import contextlib
import dataclasses
import logging
import threading
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np

from tulliolo.udmamba import ops
from tulliolo.udmamba.errors import ConfigError, ShapeError, fail
from tulliolo.udmamba.scan import BRANCH_COUNT, ScanMode, ScanOrderSet, scan_orders_for
from tulliolo.udmamba.selective_scan import STATE_SIZE_DEF, S6Params, ScanMethod
from tulliolo.udmamba.tensor import Tensor, as_tensor, is_grad_enabled
from tulliolo.udmamba.uncertainty import BlockMode, BlockUncertaintyConfig, UncertaintyMetric

LOGGER = logging.getLogger(__name__)

COSINE_GUARD = 1e-8

_RECORD_STATE = threading.local()


@contextlib.contextmanager
def no_record() -> Iterator[None]:
    """
    Leaves the last_* inspection fields of every UD-SSM untouched inside the block, for the calling thread only.
    :return:
    """
    previous = is_recording()
    _RECORD_STATE.enabled = False
    try:
        yield
    finally:
        _RECORD_STATE.enabled = previous


def is_recording() -> bool:
    return getattr(_RECORD_STATE, "enabled", True)


@dataclasses.dataclass
class UdSsmSettings:
    """
    The scan and S6 options shared by every UD-SSM of a network.
    """
    state_size: int = STATE_SIZE_DEF
    dt_rank: Optional[int] = None
    use_d: bool = True
    shared_s6: bool = False
    branches: Tuple[bool, bool, bool, bool] = (True, True, True, True)
    reweight: bool = True
    metric: UncertaintyMetric = UncertaintyMetric.DEFAULT
    block: BlockUncertaintyConfig = dataclasses.field(default_factory=BlockUncertaintyConfig)
    mode: ScanMode = ScanMode.DEFAULT
    method: ScanMethod = ScanMethod.DEFAULT

    @classmethod
    def from_dict(cls, value: dict) -> UdSsmSettings:
        value = dict(value)
        if "branches" in value:
            value["branches"] = tuple(bool(b) for b in value["branches"])
        if "metric" in value:
            value["metric"] = UncertaintyMetric(value["metric"])
        if "block" in value:
            value["block"] = BlockUncertaintyConfig.from_dict(value["block"])
        if "mode" in value:
            value["mode"] = ScanMode(value["mode"])
        if "method" in value:
            value["method"] = ScanMethod(value["method"])
        return cls(**value)

    @property
    def info(self) -> dict:
        return {
            "state_size": self.state_size,
            "dt_rank": self.dt_rank,
            "use_d": self.use_d,
            "shared_s6": self.shared_s6,
            "branches": list(self.branches),
            "reweight": self.reweight,
            "metric": self.metric.value,
            "block": self.block.info,
            "mode": self.mode.value,
            "method": self.method.value,
        }

    def validate(self):
        if len(self.branches) != BRANCH_COUNT or not any(self.branches):
            raise fail(
                LOGGER, ConfigError,
                "invalid branches",
                f"expected: {BRANCH_COUNT} flags, at least one set",
                f"obtained: {list(self.branches)}"
            )
        if self.state_size < 1:
            raise fail(LOGGER, ConfigError, "invalid state size", "expected: >= 1", f"obtained: {self.state_size}")
        if self.block.mode == BlockMode.STATIC and self.block.a < 1:
            raise fail(LOGGER, ConfigError, "invalid block size", "expected: >= 1", f"obtained: {self.block.a}")


class ReweightParams:
    """
    The four branch weights alpha_1..alpha_4, initialized to 1.
    """
    def __init__(self, trainable: bool = True, prefix: str = "alpha"):
        self.alphas = [
            Tensor(np.ones(1), requires_grad=trainable, name=f"{prefix}{i + 1}") for i in range(BRANCH_COUNT)
        ]

    def __getitem__(self, branch: int) -> Tensor:
        return self.alphas[branch]

    @property
    def values(self) -> np.ndarray:
        return np.array([alpha.data[0] for alpha in self.alphas])


@dataclasses.dataclass
class UdSsmOutput:
    """
    y is the sum of the four recovered branches (disabled branches are zero).
    """
    y: Tensor
    branch_recovered: List[Tensor]


class UdSsm:
    def __init__(
            self,
            channels: int,
            settings: Optional[UdSsmSettings] = None,
            rng: Optional[np.random.Generator] = None,
            prefix: str = "udssm"
    ):
        self.settings = settings or UdSsmSettings()
        self.settings.validate()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.channels = channels
        self.prefix = prefix

        def s6(i):
            return S6Params(
                channels, self.settings.state_size, self.settings.dt_rank, self.settings.use_d, rng,
                prefix=f"{prefix}.s6_{i}"
            )

        if self.settings.shared_s6:
            shared = s6("shared")
            self.s6 = [shared if enabled else None for enabled in self.settings.branches]
        else:
            self.s6 = [s6(i + 1) if enabled else None for i, enabled in enumerate(self.settings.branches)]
        self.reweight = ReweightParams(self.settings.reweight, prefix=f"{prefix}.alpha")
        self.last_orders: List[ScanOrderSet] = []
        self.last_features: Optional[np.ndarray] = None
        self.last_output: Optional[UdSsmOutput] = None

    def parameters(self) -> List[Tensor]:
        params = []
        seen = set()
        for block in self.s6:
            if block is not None and id(block) not in seen:
                seen.add(id(block))
                params.extend(block.parameters())
        if self.settings.reweight:
            params.extend(
                alpha for alpha, enabled in zip(self.reweight.alphas, self.settings.branches) if enabled
            )
        return params

    def orders(self, x: np.ndarray) -> List[ScanOrderSet]:
        """
        Computes the scan orders of every sample of a B x C x H x W batch.
        :param x: the features
        :return: one order set per sample
        """
        return [
            scan_orders_for(sample, self.settings.metric, self.settings.block, self.settings.mode)
            for sample in x
        ]

    def __call__(self, x, orders: Optional[Sequence[ScanOrderSet]] = None) -> UdSsmOutput:
        return ud_ssm_forward(x, self, orders)


def ud_ssm_forward(x, module: UdSsm, orders: Optional[Sequence[ScanOrderSet]] = None) -> UdSsmOutput:
    """
    Runs the four scan branches on a feature map and sums the recovered outputs.
    :param x: C x H x W or B x C x H x W features
    :param module: the UD-SSM parameters and settings
    :param orders: precomputed per-sample orders (computed from x when omitted)
    :return:
    """
    x = as_tensor(x)
    if x.ndim == 3:
        out = ud_ssm_forward(ops.reshape(x, (1,) + x.shape), module, orders)
        return UdSsmOutput(
            ops.reshape(out.y, x.shape),
            [ops.reshape(branch, x.shape) for branch in out.branch_recovered]
        )
    if x.ndim != 4 or x.shape[1] != module.channels:
        raise fail(
            LOGGER, ShapeError,
            "invalid feature shape",
            f"expected: (B, {module.channels}, H, W)",
            f"obtained: {x.shape}"
        )

    batch, _, height, width = x.shape
    orders = list(orders) if orders is not None else module.orders(x.data)
    if is_recording():
        module.last_orders = orders
        module.last_features = x.data
    settings = module.settings

    recovered = []
    for branch in range(BRANCH_COUNT):
        if not settings.branches[branch]:
            recovered.append(Tensor(np.zeros(x.shape)))
            continue
        perm = np.stack([order[branch] for order in orders])
        seq = ops.permute_gather(x, perm)
        if settings.reweight:
            seq = ops.mul(seq, module.reweight[branch])
        seq = module.s6[branch](seq, settings.method)
        recovered.append(ops.permute_scatter(seq, perm, height, width))

    y = recovered[0]
    for branch in recovered[1:]:
        y = ops.add(y, branch)
    out = UdSsmOutput(y, recovered)
    if is_recording() and not is_grad_enabled():
        # kept for inspection only, a training graph is never retained
        module.last_output = out
    return out


def _mean_cosine(a: Tensor, b: Tensor, axis: int) -> Tensor:
    dot = ops.sum(ops.mul(a, b), axis=axis)
    norms = ops.mul(ops.sum(ops.mul(a, a), axis=axis), ops.sum(ops.mul(b, b), axis=axis))
    # sqrt(max(|a|^2 |b|^2, guard^2)) = max(|a| |b|, guard)
    denominator = ops.sqrt(ops.clamp_min(norms, COSINE_GUARD * COSINE_GUARD))
    return ops.mean(ops.div(dot, denominator))


def consistency_loss(out: UdSsmOutput) -> Tensor:
    """
    1 - (cos(y1, y3) + cos(y2, y4)) / 2, the cosine similarity being taken over the channel vector of every
    location and averaged over locations and samples.
    :param out: the UD-SSM output
    :return: a scalar in [0, 2]
    """
    if len(out.branch_recovered) != BRANCH_COUNT:
        raise fail(
            LOGGER, ShapeError,
            "invalid branch count",
            f"expected: {BRANCH_COUNT}",
            f"obtained: {len(out.branch_recovered)}"
        )
    y1, y2, y3, y4 = out.branch_recovered
    axis = ops.channel_axis(y1.ndim)
    similarity = ops.add(_mean_cosine(y1, y3, axis), _mean_cosine(y2, y4, axis))
    return ops.sub(1.0, ops.mul(similarity, 0.5))


def branch_norms(out: UdSsmOutput) -> List[float]:
    """
    The L2 norm of every recovered branch (inspection dump).
    :param out: the UD-SSM output
    :return:
    """
    return [float(np.linalg.norm(branch.data)) for branch in out.branch_recovered]
