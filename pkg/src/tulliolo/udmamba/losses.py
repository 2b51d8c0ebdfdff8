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
The training objective: cross-entropy plus soft Dice (the supervised term), and its sum with the weighted
consistency loss.
"""
from __future__ import annotations

import dataclasses
import logging
from typing import Optional, Tuple, Union

import numpy as np

from tulliolo.udmamba import ops
from tulliolo.udmamba.errors import ConfigError, DataError, ShapeError, fail
from tulliolo.udmamba.tensor import Tensor, as_tensor

LOGGER = logging.getLogger(__name__)

LAMBDA_DEF = 0.3
DICE_EPS_DEF = 1e-5


@dataclasses.dataclass
class LossConfig:
    """
    lam weighs the consistency loss; class_weights (one per class, uniform when omitted) weigh the cross-entropy.
    """
    lam: float = LAMBDA_DEF
    dice_eps: float = DICE_EPS_DEF
    class_weights: Optional[Tuple[float, ...]] = None

    @classmethod
    def from_dict(cls, value: dict) -> LossConfig:
        value = dict(value)
        if "lambda" in value:
            value["lam"] = value.pop("lambda")
        if value.get("class_weights") is not None:
            value["class_weights"] = tuple(float(w) for w in value["class_weights"])
        return cls(**value)

    @property
    def info(self) -> dict:
        return {
            "lam": self.lam,
            "dice_eps": self.dice_eps,
            "class_weights": list(self.class_weights) if self.class_weights is not None else None,
        }

    def validate(self, num_classes: Optional[int] = None):
        if not self.lam >= 0:
            raise fail(LOGGER, ConfigError, "invalid lambda", "expected: >= 0", f"obtained: {self.lam}")
        if not self.dice_eps > 0:
            raise fail(LOGGER, ConfigError, "invalid dice eps", "expected: > 0", f"obtained: {self.dice_eps}")
        if self.class_weights is not None:
            if num_classes is not None and len(self.class_weights) != num_classes:
                raise fail(
                    LOGGER, ConfigError,
                    "invalid class weights",
                    f"expected: {num_classes} weights",
                    f"obtained: {len(self.class_weights)}"
                )
            if any(not w >= 0 for w in self.class_weights) or not sum(self.class_weights) > 0:
                raise fail(
                    LOGGER, ConfigError,
                    "invalid class weights",
                    "expected: non-negative, positive sum",
                    f"obtained: {list(self.class_weights)}"
                )


def one_hot(target, num_classes: int) -> np.ndarray:
    """
    Expands a B x H x W class map to B x K x H x W indicators.
    :param target: the class map
    :param num_classes: K
    :return:
    """
    target = np.asarray(target)
    if target.ndim != 3:
        raise fail(LOGGER, ShapeError, "invalid target shape", "expected: (B, H, W)", f"obtained: {target.shape}")
    if not np.issubdtype(target.dtype, np.integer):
        if not np.all(np.isfinite(target)) or np.any(target != np.round(target)):
            raise fail(LOGGER, DataError, "invalid class index", "expected: integers", f"obtained: {target.dtype}")
        target = target.astype(np.int64)
    if target.size and (target.min() < 0 or target.max() >= num_classes):
        raise fail(
            LOGGER, DataError,
            "invalid class index",
            f"expected: 0 <= index < {num_classes}",
            f"obtained: [{target.min()}, {target.max()}]"
        )
    return (target[:, None, :, :] == np.arange(num_classes)[None, :, None, None]).astype(np.float64)


def _check_logits(logits: Tensor, target) -> np.ndarray:
    if logits.ndim != 4:
        raise fail(LOGGER, ShapeError, "invalid logits shape", "expected: (B, K, H, W)", f"obtained: {logits.shape}")
    target = np.asarray(target)
    expected = (logits.shape[0],) + logits.shape[2:]
    if target.shape != expected:
        raise fail(
            LOGGER, ShapeError,
            "invalid target shape",
            f"expected: {expected}",
            f"obtained: {target.shape}"
        )
    return one_hot(target, logits.shape[1])


def cross_entropy(logits, target, weights: Optional[Tuple[float, ...]] = None) -> Tensor:
    """
    The (class-weighted) mean pixel cross-entropy.
    :param logits: B x K x H x W
    :param target: B x H x W class indices
    :param weights: per-class weights, uniform when omitted
    :return: a scalar tensor
    """
    logits = as_tensor(logits)
    onehot = _check_logits(logits, target)
    num_classes = logits.shape[1]
    weights = np.ones(num_classes) if weights is None else np.asarray(weights, dtype=np.float64)
    weighted = onehot * weights[None, :, None, None]
    total = float(weighted.sum())
    if total <= 0:
        raise fail(LOGGER, DataError, "empty weighted target", "expected: positive total weight", "obtained: 0")
    nll = ops.neg(ops.sum(ops.mul(ops.log_softmax(logits, axis=1), Tensor(weighted))))
    return ops.div(nll, total)


def dice_loss(logits, target, eps: float = DICE_EPS_DEF) -> Tensor:
    """
    1 - the soft Dice of the softmax probabilities, averaged over the foreground classes 1..K-1.
    :param logits: B x K x H x W
    :param target: B x H x W class indices
    :param eps: the smoothing term of numerator and denominator
    :return: a scalar tensor
    """
    logits = as_tensor(logits)
    onehot = _check_logits(logits, target)
    if logits.shape[1] < 2:
        raise fail(LOGGER, ShapeError, "invalid class count", "expected: K >= 2", f"obtained: {logits.shape[1]}")
    probs = ops.softmax(logits, axis=1)
    axes = (0, 2, 3)
    intersection = ops.sum(ops.mul(probs, Tensor(onehot)), axis=axes)
    denominator = ops.add(ops.sum(probs, axis=axes), onehot.sum(axis=axes) + eps)
    dice = ops.div(ops.add(ops.mul(intersection, 2.0), eps), denominator)
    foreground = np.zeros(logits.shape[1])
    foreground[1:] = 1.0 / (logits.shape[1] - 1)
    return ops.sub(1.0, ops.sum(ops.mul(dice, Tensor(foreground))))


def supervised_loss(logits, target, cfg: Optional[LossConfig] = None) -> Tensor:
    """
    Cross-entropy plus Dice loss, equally weighted.
    :param logits: B x K x H x W
    :param target: B x H x W class indices
    :param cfg: the loss configuration
    :return: a scalar tensor
    """
    cfg = cfg or LossConfig()
    return ops.add(cross_entropy(logits, target, cfg.class_weights), dice_loss(logits, target, cfg.dice_eps))


def total_loss(l_sup: Union[Tensor, float], l_cos: Union[Tensor, float], cfg: Optional[LossConfig] = None) -> Tensor:
    cfg = cfg or LossConfig()
    return ops.add(l_sup, ops.mul(l_cos, cfg.lam))
