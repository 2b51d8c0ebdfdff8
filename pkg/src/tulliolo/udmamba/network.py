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
A desk-scale UD-Mamba: patch embedding, an encoder-decoder of UD blocks with skip connections and a segmentation head.
"""
from __future__ import annotations

import copy
import dataclasses
import logging
import math
from collections import OrderedDict
from typing import Dict, List, Optional, Tuple

import numpy as np

from tulliolo.udmamba import ops
from tulliolo.udmamba.errors import ConfigError, ShapeError, fail
from tulliolo.udmamba.scan import BRANCH_COUNT, ScanMode
from tulliolo.udmamba.tensor import Tensor, as_tensor
from tulliolo.udmamba.udssm import UdSsm, UdSsmOutput, UdSsmSettings
from tulliolo.udmamba.uncertainty import BlockMode

LOGGER = logging.getLogger(__name__)

LN_EPS = 1e-5


@dataclasses.dataclass
class NetworkConfig:
    in_channels: int = 1
    num_classes: int = 2
    patch_size: int = 4
    stage_channels: Tuple[int, ...] = (32, 64, 128)
    blocks_per_stage: int = 2
    ssm: UdSsmSettings = dataclasses.field(default_factory=UdSsmSettings)
    seed: int = 0

    @classmethod
    def from_dict(cls, value: dict) -> NetworkConfig:
        value = dict(value)
        if "stage_channels" in value:
            value["stage_channels"] = tuple(int(c) for c in value["stage_channels"])
        if "ssm" in value:
            value["ssm"] = UdSsmSettings.from_dict(value["ssm"])
        return cls(**value)

    @property
    def info(self) -> dict:
        return {
            "in_channels": self.in_channels,
            "num_classes": self.num_classes,
            "patch_size": self.patch_size,
            "stage_channels": list(self.stage_channels),
            "blocks_per_stage": self.blocks_per_stage,
            "ssm": self.ssm.info,
            "seed": self.seed,
        }

    @property
    def stages(self) -> int:
        return len(self.stage_channels)

    @property
    def reduction(self) -> int:
        """The cumulative downsampling factor down to the bottleneck."""
        return self.patch_size * 2 ** (self.stages - 1)

    def validate(self):
        if self.in_channels < 1 or self.num_classes < 2:
            raise fail(
                LOGGER, ConfigError,
                "invalid network io",
                "expected: in_channels >= 1, num_classes >= 2",
                f"obtained: {self.in_channels}, {self.num_classes}"
            )
        if self.patch_size < 1 or self.blocks_per_stage < 1 or not self.stage_channels:
            raise fail(
                LOGGER, ConfigError,
                "invalid network size",
                "expected: patch_size >= 1, blocks_per_stage >= 1, at least one stage",
                f"obtained: {self.patch_size}, {self.blocks_per_stage}, {list(self.stage_channels)}"
            )
        if any(c < 1 for c in self.stage_channels):
            raise fail(
                LOGGER, ConfigError,
                "invalid stage channels",
                "expected: positive",
                f"obtained: {list(self.stage_channels)}"
            )
        self.ssm.validate()

    def check_input(self, height: int, width: int):
        if height % self.reduction or width % self.reduction:
            raise fail(
                LOGGER, ConfigError,
                "invalid input size",
                f"expected: extents divisible by {self.reduction}",
                f"obtained: {height} x {width}"
            )

    def ssm_parameter_count(self, channels: int) -> int:
        ssm = self.ssm
        rank = ssm.dt_rank or max(1, channels // 16)
        s6 = 2 * rank * channels + channels + 3 * ssm.state_size * channels + (channels if ssm.use_d else 0)
        enabled = sum(bool(b) for b in ssm.branches)
        return s6 * (1 if ssm.shared_s6 else enabled) + (enabled if ssm.reweight else 0)

    def block_parameter_count(self, channels: int) -> int:
        return 2 * channels + 2 * (channels * channels + channels) + 9 * channels + self.ssm_parameter_count(channels)

    def parameter_count(self) -> int:
        """
        The closed-form number of trainable scalars.
        :return:
        """
        c = self.stage_channels
        count = c[0] * self.in_channels * self.patch_size ** 2 + c[0]
        count += 2 * self.blocks_per_stage * sum(self.block_parameter_count(ch) for ch in c)
        for s in range(self.stages - 1):
            count += c[s + 1] * c[s] * 4 + c[s + 1]
            count += c[s] * c[s + 1] + c[s]
            count += 2 * c[s] * c[s] + c[s]
        count += c[0] * (c[0] + self.in_channels) + c[0]
        count += self.num_classes * c[0] + self.num_classes
        return count


@dataclasses.dataclass
class AblationPreset:
    """
    A component/strategy combination: enabled branches, reweighting, consistency loss and scan mode.
    """
    branches: Tuple[bool, bool, bool, bool]
    reweight: bool
    lcos: bool
    mode: ScanMode = ScanMode.UNCERTAINTY


ABLATION_PRESETS: Dict[str, AblationPreset] = OrderedDict([
    ("raster", AblationPreset((True, False, False, False), False, False, ScanMode.RASTER)),
    ("y3", AblationPreset((False, False, True, False), False, False)),
    ("y4", AblationPreset((False, False, False, True), False, False)),
    ("y1+y3", AblationPreset((True, False, True, False), False, False)),
    ("y2+y4", AblationPreset((False, True, False, True), False, False)),
    ("y1-y4", AblationPreset((True, True, True, True), False, False)),
    ("reweight", AblationPreset((True, True, True, True), True, False)),
    ("full", AblationPreset((True, True, True, True), True, True)),
])


class Parameters:
    """
    A named, ordered collection of trainable tensors, filled with seeded fan-in uniform values.
    """
    def __init__(self, rng: np.random.Generator):
        self.rng = rng
        self.tensors: Dict[str, Tensor] = OrderedDict()

    def add(self, name: str, tensor: Tensor) -> Tensor:
        if name in self.tensors:
            raise fail(LOGGER, ConfigError, "duplicated parameter", f"obtained: {name}")
        tensor.name = name
        self.tensors[name] = tensor
        return tensor

    def uniform(self, name: str, shape: tuple, fan_in: int) -> Tensor:
        bound = 1.0 / math.sqrt(fan_in)
        return self.add(name, Tensor(self.rng.uniform(-bound, bound, size=shape), requires_grad=True))

    def constant(self, name: str, shape: tuple, value: float) -> Tensor:
        return self.add(name, Tensor(np.full(shape, value, dtype=np.float64), requires_grad=True))


class UdBlock:
    """
    LN -> linear -> depthwise conv -> SiLU -> UD-SSM -> linear, added to the block input.
    """
    def __init__(self, channels: int, settings: UdSsmSettings, params: Parameters, prefix: str):
        self.channels = channels
        self.ln_gamma = params.constant(f"{prefix}.ln.gamma", (channels,), 1.0)
        self.ln_beta = params.constant(f"{prefix}.ln.beta", (channels,), 0.0)
        self.in_w = params.uniform(f"{prefix}.in.weight", (channels, channels), channels)
        self.in_b = params.constant(f"{prefix}.in.bias", (channels,), 0.0)
        self.dw = params.uniform(f"{prefix}.dwconv.weight", (channels, 3, 3), 9)
        self.ssm = UdSsm(channels, settings, params.rng, prefix=f"{prefix}.ssm")
        for tensor in self.ssm.parameters():
            params.add(tensor.name, tensor)
        self.out_w = params.uniform(f"{prefix}.out.weight", (channels, channels), channels)
        self.out_b = params.constant(f"{prefix}.out.bias", (channels,), 0.0)

    def __call__(self, x) -> Tuple[Tensor, UdSsmOutput]:
        return ud_block_forward(self, x)


def ud_block_forward(block: UdBlock, x) -> Tuple[Tensor, UdSsmOutput]:
    """
    Runs a UD block.
    :param block: the block
    :param x: B x C x H x W features
    :return: the output (same shape as x) and the UD-SSM output
    """
    x = as_tensor(x)
    if x.ndim != 4 or x.shape[1] != block.channels:
        raise fail(
            LOGGER, ShapeError,
            "invalid block input",
            f"expected: (B, {block.channels}, H, W)",
            f"obtained: {x.shape}"
        )
    h = ops.layer_norm(x, block.ln_gamma, block.ln_beta, LN_EPS, axis=1)
    h = ops.linear(h, block.in_w, block.in_b, axis=1)
    h = ops.silu(ops.depthwise_conv3x3(h, block.dw))
    ud = block.ssm(h)
    out = ops.add(x, ops.linear(ud.y, block.out_w, block.out_b, axis=1))
    return out, ud


class UdMamba:
    def __init__(self, config: Optional[NetworkConfig] = None):
        # the dynamic block extents are resolved on the first forward pass, on a private copy
        self.config = copy.deepcopy(config) if config is not None else NetworkConfig()
        self.config.validate()
        cfg = self.config
        c = cfg.stage_channels
        self.params = Parameters(np.random.default_rng(cfg.seed))
        p = self.params

        self.embed_w = p.uniform("embed.weight", (c[0], cfg.in_channels, cfg.patch_size, cfg.patch_size),
                                 cfg.in_channels * cfg.patch_size ** 2)
        self.embed_b = p.constant("embed.bias", (c[0],), 0.0)

        self.encoder: List[List[UdBlock]] = []
        self.down: List[Tuple[Tensor, Tensor]] = []
        for s, channels in enumerate(c):
            self.encoder.append([
                UdBlock(channels, cfg.ssm, p, f"encoder.{s}.block.{b}") for b in range(cfg.blocks_per_stage)
            ])
            if s < cfg.stages - 1:
                self.down.append((
                    p.uniform(f"encoder.{s}.down.weight", (c[s + 1], channels, 2, 2), channels * 4),
                    p.constant(f"encoder.{s}.down.bias", (c[s + 1],), 0.0),
                ))

        self.decoder: List[List[UdBlock]] = [[] for _ in c]
        self.up: List[Tuple[Tensor, Tensor, Tensor, Tensor]] = [() for _ in c[:-1]]
        for s in reversed(range(cfg.stages)):
            if s < cfg.stages - 1:
                self.up[s] = (
                    p.uniform(f"decoder.{s}.up.weight", (c[s], c[s + 1]), c[s + 1]),
                    p.constant(f"decoder.{s}.up.bias", (c[s],), 0.0),
                    p.uniform(f"decoder.{s}.fuse.weight", (c[s], 2 * c[s]), 2 * c[s]),
                    p.constant(f"decoder.{s}.fuse.bias", (c[s],), 0.0),
                )
            self.decoder[s] = [
                UdBlock(c[s], cfg.ssm, p, f"decoder.{s}.block.{b}") for b in range(cfg.blocks_per_stage)
            ]

        self.head_w1 = p.uniform("head.hidden.weight", (c[0], c[0] + cfg.in_channels), c[0] + cfg.in_channels)
        self.head_b1 = p.constant("head.hidden.bias", (c[0],), 0.0)
        self.head_w2 = p.uniform("head.out.weight", (cfg.num_classes, c[0]), c[0])
        self.head_b2 = p.constant("head.out.bias", (cfg.num_classes,), 0.0)

        LOGGER.debug(f"built network with {self.parameter_size()} parameters")

    def parameters(self) -> Dict[str, Tensor]:
        return self.params.tensors

    def parameter_size(self) -> int:
        return int(sum(t.size for t in self.params.tensors.values()))

    def blocks(self) -> List[UdBlock]:
        return [block for stage in self.encoder + self.decoder for block in stage]

    def state_dict(self) -> Dict[str, np.ndarray]:
        return OrderedDict((name, t.data.copy()) for name, t in self.params.tensors.items())

    def load_state_dict(self, state: Dict[str, np.ndarray]):
        missing = [name for name in self.params.tensors if name not in state]
        if missing:
            raise fail(
                LOGGER, ConfigError,
                "invalid checkpoint",
                f"expected: {len(self.params.tensors)} tensors",
                f"obtained: {len(missing)} missing, e.g. {missing[0]}"
            )
        for name, tensor in self.params.tensors.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != tensor.shape:
                raise fail(
                    LOGGER, ShapeError,
                    "invalid checkpoint tensor",
                    f"expected: {name} {tensor.shape}",
                    f"obtained: {value.shape}"
                )
            tensor.data = value.copy()

    def alphas(self) -> np.ndarray:
        """
        The mean of alpha_1..alpha_4 across all UD-SSM layers.
        :return:
        """
        values = np.stack([block.ssm.reweight.values for block in self.blocks()])
        return values.mean(axis=0)

    def _resolve_block_extents(self, height: int):
        block = self.config.ssm.block
        if block.mode in (BlockMode.DYNAMIC_PROPORTIONAL, BlockMode.DYNAMIC_INVERSE):
            block.a_v_max = block.a_v_max or height // self.config.patch_size
            block.a_v_min = block.a_v_min or height // self.config.reduction

    def __call__(self, image) -> Tuple[Tensor, UdSsmOutput]:
        return forward(self, image)


def forward(net: UdMamba, image) -> Tuple[Tensor, UdSsmOutput]:
    """
    Segments a batch of images.
    :param net: the network
    :param image: B x Cin x H x W images
    :return: B x K x H x W logits and the UD-SSM output of the last decoder block
    """
    cfg = net.config
    image = as_tensor(image)
    if image.ndim != 4 or image.shape[1] != cfg.in_channels:
        raise fail(
            LOGGER, ShapeError,
            "invalid image shape",
            f"expected: (B, {cfg.in_channels}, H, W)",
            f"obtained: {image.shape}"
        )
    cfg.check_input(image.shape[2], image.shape[3])
    net._resolve_block_extents(image.shape[2])

    x = ops.conv_patchify(image, net.embed_w, net.embed_b, cfg.patch_size)
    skips = []
    for s, stage in enumerate(net.encoder):
        for block in stage:
            x, _ = block(x)
        skips.append(x)
        if s < cfg.stages - 1:
            weight, bias = net.down[s]
            x = ops.conv_patchify(x, weight, bias, 2)

    aux = None
    for s in reversed(range(cfg.stages)):
        if s < cfg.stages - 1:
            up_w, up_b, fuse_w, fuse_b = net.up[s]
            x = ops.linear(ops.upsample_nearest(x, 2), up_w, up_b, axis=1)
            x = ops.linear(ops.concat([x, skips[s]], axis=1), fuse_w, fuse_b, axis=1)
        for block in net.decoder[s]:
            x, aux = block(x)

    x = ops.concat([ops.upsample_nearest(x, cfg.patch_size), image], axis=1)
    x = ops.silu(ops.linear(x, net.head_w1, net.head_b1, axis=1))
    logits = ops.linear(x, net.head_w2, net.head_b2, axis=1)
    return logits, aux


def apply_preset(config: NetworkConfig, preset: AblationPreset) -> NetworkConfig:
    """
    Returns a copy of config with the preset scan components.
    :param config: the base configuration
    :param preset: the ablation preset
    :return:
    """
    if len(preset.branches) != BRANCH_COUNT:
        raise fail(LOGGER, ConfigError, "invalid preset", f"expected: {BRANCH_COUNT} branches")
    ssm = dataclasses.replace(
        config.ssm,
        branches=tuple(preset.branches), reweight=preset.reweight, mode=preset.mode,
        block=dataclasses.replace(config.ssm.block)
    )
    return dataclasses.replace(config, ssm=ssm)
