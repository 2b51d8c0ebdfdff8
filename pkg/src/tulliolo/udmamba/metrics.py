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
Segmentation metrics from confusion counts (DSC, IoU, ACC, Sen, Spe) and the 95% boundary distance (HD95).
"""
from __future__ import annotations

import dataclasses
import io
import json
import logging
import math
from collections import OrderedDict
from typing import Dict, List, Sequence

import numpy as np
from scipy import ndimage
from scipy.spatial.distance import cdist

from tulliolo.udmamba.errors import DataError, ShapeError, fail

LOGGER = logging.getLogger(__name__)

HD_PERCENTILE = 95
METRIC_NAMES = ("dsc", "iou", "acc", "sen", "spe", "hd95")

# 4-connectivity
_CROSS = ndimage.generate_binary_structure(2, 1)


@dataclasses.dataclass
class SegMetrics:
    dsc: float
    iou: float
    acc: float
    sen: float
    spe: float
    hd95: float

    @property
    def info(self) -> dict:
        return OrderedDict((name, getattr(self, name)) for name in METRIC_NAMES)


@dataclasses.dataclass
class MaskEvaluation:
    """
    The metrics of every foreground class (1..K-1) and their macro average.
    """
    per_class: Dict[int, SegMetrics]
    macro: SegMetrics


def _check_pair(pred, gt):
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape or pred.ndim != 2:
        raise fail(
            LOGGER, ShapeError,
            "invalid mask shape",
            "expected: two equal H x W masks",
            f"obtained: {pred.shape}, {gt.shape}"
        )
    return pred.astype(bool), gt.astype(bool)


def _ratio(numerator: int, denominator: int, agree: bool) -> float:
    """
    A zero denominator scores 1 when FP = FN = 0, not only when both masks are empty:
    two all-foreground masks get SPE 1 (TN + FP = 0).
    """
    if denominator == 0:
        return 1.0 if agree else 0.0
    return numerator / denominator


def seg_metrics(pred_mask, gt_mask) -> SegMetrics:
    """
    Computes the metrics of a binary prediction against a binary ground truth.
    :param pred_mask: the predicted H x W mask
    :param gt_mask: the ground truth H x W mask
    :return:
    """
    pred, gt = _check_pair(pred_mask, gt_mask)
    tp = int(np.count_nonzero(pred & gt))
    fp = int(np.count_nonzero(pred & ~gt))
    fn = int(np.count_nonzero(~pred & gt))
    tn = int(np.count_nonzero(~pred & ~gt))
    agree = fp == 0 and fn == 0
    return SegMetrics(
        dsc=_ratio(2 * tp, 2 * tp + fp + fn, agree),
        iou=_ratio(tp, tp + fp + fn, agree),
        acc=_ratio(tp + tn, pred.size, agree),
        sen=_ratio(tp, tp + fn, agree),
        spe=_ratio(tn, tn + fp, agree),
        hd95=hd95(pred, gt),
    )


def boundary(mask) -> np.ndarray:
    """
    The foreground pixels having at least one background 4-neighbor (outside the image counts as background).
    :param mask: the H x W mask
    :return: the boundary mask
    """
    mask = np.asarray(mask, dtype=bool)
    return mask & ~ndimage.binary_erosion(mask, structure=_CROSS, border_value=0)


def hd95(pred_mask, gt_mask) -> float:
    """
    The 95th percentile (linear interpolation) of the union of both directed nearest boundary distances.
    :param pred_mask: the predicted H x W mask
    :param gt_mask: the ground truth H x W mask
    :return: the distance in pixels, inf if a mask is empty
    """
    pred, gt = _check_pair(pred_mask, gt_mask)
    if not pred.any() or not gt.any():
        LOGGER.warning(f"empty mask (pred {int(pred.sum())} px, gt {int(gt.sum())} px): hd95 set to inf")
        return math.inf

    pred_points = np.argwhere(boundary(pred))
    gt_points = np.argwhere(boundary(gt))
    distances = cdist(pred_points, gt_points)
    combined = np.concatenate([distances.min(axis=1), distances.min(axis=0)])
    return float(np.percentile(combined, HD_PERCENTILE))


def _mean(values: Sequence[float]) -> float:
    return float(np.mean(values)) if len(values) else math.nan


def aggregate(metrics: Sequence[SegMetrics]) -> SegMetrics:
    """
    Averages metrics in sequence order; HD95 is averaged over its finite values (inf if there are none).
    :param metrics: the metrics to average
    :return:
    """
    finite = [m.hd95 for m in metrics if math.isfinite(m.hd95)]
    return SegMetrics(
        dsc=_mean([m.dsc for m in metrics]),
        iou=_mean([m.iou for m in metrics]),
        acc=_mean([m.acc for m in metrics]),
        sen=_mean([m.sen for m in metrics]),
        spe=_mean([m.spe for m in metrics]),
        hd95=_mean(finite) if finite else math.inf,
    )


def evaluate_masks(pred, gt, num_classes: int) -> MaskEvaluation:
    """
    Evaluates a multi-class prediction class by class (foreground classes only) and macro-averages the result.
    :param pred: the predicted H x W class map
    :param gt: the ground truth H x W class map
    :param num_classes: K
    :return:
    """
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    for name, mask in (("prediction", pred), ("ground truth", gt)):
        if mask.size and (mask.min() < 0 or mask.max() >= num_classes):
            raise fail(
                LOGGER, DataError,
                "invalid class index",
                f"expected: {name} in [0, {num_classes})",
                f"obtained: [{mask.min()}, {mask.max()}]"
            )
    per_class = OrderedDict((k, seg_metrics(pred == k, gt == k)) for k in range(1, num_classes))
    return MaskEvaluation(per_class, aggregate(list(per_class.values())))


def _number(value: float):
    return None if not math.isfinite(value) else value


def metrics_report_rows(evaluations: Sequence[MaskEvaluation]) -> List[tuple]:
    """
    Flattens evaluations into (sample, class, metrics) rows; class "macro" holds the per-sample macro average and the
    final rows ("all", class) aggregate over the samples.
    :param evaluations: one evaluation per sample, in sample order
    :return:
    """
    rows = []
    for sample, evaluation in enumerate(evaluations):
        rows.extend((str(sample), str(k), m) for k, m in evaluation.per_class.items())
        rows.append((str(sample), "macro", evaluation.macro))
    if evaluations:
        for k in evaluations[0].per_class:
            rows.append(("all", str(k), aggregate([e.per_class[k] for e in evaluations])))
        rows.append(("all", "macro", aggregate([e.macro for e in evaluations])))
    return rows


def metrics_report_csv(evaluations: Sequence[MaskEvaluation]) -> str:
    buffer = io.StringIO()
    buffer.write("sample,class," + ",".join(METRIC_NAMES) + "\n")
    for sample, klass, m in metrics_report_rows(evaluations):
        buffer.write(f"{sample},{klass}," + ",".join(repr(float(v)) for v in m.info.values()) + "\n")
    return buffer.getvalue()


def metrics_report_json(evaluations: Sequence[MaskEvaluation]) -> str:
    """
    The report as JSON; infinite HD95 values are written as null.
    :param evaluations: one evaluation per sample, in sample order
    :return:
    """
    rows = [
        {"sample": sample, "class": klass, **{k: _number(v) for k, v in m.info.items()}}
        for sample, klass, m in metrics_report_rows(evaluations)
    ]
    return json.dumps(rows, indent=2)
