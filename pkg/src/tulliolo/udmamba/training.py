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
The optimizer loop: SGD with momentum and multi-step decay on L_sup + lambda L_cos, per-epoch validation,
the alpha trace and the best checkpoint; plus the evaluation and ablation drivers built on it.
"""
from __future__ import annotations

import concurrent.futures
import dataclasses
import json
import logging
import math
import pathlib
from collections import OrderedDict
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from tqdm import tqdm

from tulliolo.udmamba.errors import ConfigError, NumericError, fail
from tulliolo.udmamba.losses import LossConfig, supervised_loss, total_loss
from tulliolo.udmamba.metrics import MaskEvaluation, SegMetrics, aggregate, evaluate_masks
from tulliolo.udmamba.network import ABLATION_PRESETS, NetworkConfig, UdMamba, apply_preset
from tulliolo.udmamba.tensor import Tensor, backward, no_grad
from tulliolo.udmamba.udssm import consistency_loss, no_record
from tulliolo.udmamba.uncertainty import BlockMode, BlockUncertaintyConfig, UncertaintyMetric
from tulliolo.udmamba.utils.common import append_csv
from tulliolo.udmamba.utils.synthetic import Dataset, SynthConfig, generate_synthetic, load_dataset
from tulliolo.udmamba.utils.tensorfile import read_checkpoint, write_checkpoint

LOGGER = logging.getLogger(__name__)

TRAIN_LOG = "train_log.csv"
TRAIN_LOG_HEADER = ("epoch", "l_sup", "l_cos", "total", "val_dsc", "lr")
ALPHA_TRACE = "alpha_trace.csv"
ALPHA_TRACE_HEADER = ("epoch", "alpha1", "alpha2", "alpha3", "alpha4")
BEST_CHECKPOINT = "best.udck"
CONFIG_FILE = "config.json"


@dataclasses.dataclass
class TrainConfig:
    """
    milestones are fractions of the total step count; at each one the learning rate is multiplied by gamma.
    """
    lr: float = 0.01
    momentum: float = 0.9
    epochs: int = 25
    milestones: Tuple[float, ...] = (0.6, 0.85)
    gamma: float = 0.1
    batch_size: int = 4
    seed: int = 0
    lcos: bool = True
    threads: int = 1
    eval_train: bool = True

    @classmethod
    def from_dict(cls, value: dict) -> TrainConfig:
        value = dict(value)
        if "milestones" in value:
            value["milestones"] = tuple(float(m) for m in value["milestones"])
        return cls(**value)

    @property
    def info(self) -> dict:
        info = dataclasses.asdict(self)
        info["milestones"] = list(self.milestones)
        return info

    def validate(self):
        if not self.lr >= 0 or not 0 <= self.momentum < 1 or not 0 < self.gamma <= 1:
            raise fail(
                LOGGER, ConfigError,
                "invalid optimizer",
                "expected: lr >= 0, 0 <= momentum < 1, 0 < gamma <= 1",
                f"obtained: {self.lr}, {self.momentum}, {self.gamma}"
            )
        milestones = list(self.milestones)
        if any(not 0 < m < 1 for m in milestones) or any(a >= b for a, b in zip(milestones, milestones[1:])):
            raise fail(
                LOGGER, ConfigError,
                "invalid milestones",
                "expected: strictly increasing in (0, 1)",
                f"obtained: {milestones}"
            )
        if self.epochs < 1 or self.batch_size < 1 or self.threads < 1:
            raise fail(
                LOGGER, ConfigError,
                "invalid schedule",
                "expected: epochs, batch_size and threads >= 1",
                f"obtained: {self.epochs}, {self.batch_size}, {self.threads}"
            )


@dataclasses.dataclass
class ExperimentConfig:
    """
    A full run: network, loss, optimizer and data (a dataset directory, or the synthetic generator config).
    """
    network: NetworkConfig = dataclasses.field(default_factory=NetworkConfig)
    loss: LossConfig = dataclasses.field(default_factory=LossConfig)
    train: TrainConfig = dataclasses.field(default_factory=TrainConfig)
    data: SynthConfig = dataclasses.field(default_factory=SynthConfig)
    dataset: Optional[str] = None

    @classmethod
    def from_dict(cls, value: dict) -> ExperimentConfig:
        unknown = set(value) - {"network", "loss", "train", "data", "dataset"}
        if unknown:
            raise fail(LOGGER, ConfigError, "invalid config section", f"obtained: {sorted(unknown)}")
        try:
            return cls(
                NetworkConfig.from_dict(value.get("network", {})),
                LossConfig.from_dict(value.get("loss", {})),
                TrainConfig.from_dict(value.get("train", {})),
                SynthConfig.from_dict(value.get("data", {})),
                value.get("dataset"),
            )
        except (TypeError, ValueError) as e:
            if isinstance(e, ConfigError):
                raise
            raise fail(LOGGER, ConfigError, "invalid config value", f"obtained: {e}")

    @property
    def info(self) -> dict:
        return {
            "network": self.network.info,
            "loss": self.loss.info,
            "train": self.train.info,
            "data": self.data.info,
            "dataset": self.dataset,
        }

    def validate(self):
        self.network.validate()
        self.loss.validate(self.network.num_classes)
        self.train.validate()
        self.data.validate()


class SGD:
    """
    Stochastic gradient descent with momentum: v = momentum * v + g; p = p - lr * v.
    """
    def __init__(self, params: Dict[str, Tensor], momentum: float = 0.9):
        self.params = params
        self.momentum = momentum
        self.velocity = {name: np.zeros_like(t.data) for name, t in params.items()}

    def zero_grad(self):
        for tensor in self.params.values():
            tensor.zero_grad()

    def step(self, lr: float):
        for name, tensor in self.params.items():
            if tensor.grad is None:
                continue
            if not np.all(np.isfinite(tensor.grad)):
                raise fail(
                    LOGGER, NumericError,
                    "non-finite gradient",
                    f"parameter: {name}",
                    f"obtained: {int(np.count_nonzero(~np.isfinite(tensor.grad)))} non-finite"
                )
            velocity = self.velocity[name]
            velocity *= self.momentum
            velocity += tensor.grad
            tensor.data = tensor.data - lr * velocity


def lr_at(step: int, total_steps: int, cfg: TrainConfig) -> float:
    """
    The multi-step learning rate of a (0-based) step.
    :param step: the step
    :param total_steps: the run length in steps
    :param cfg: the optimizer config
    :return:
    """
    passed = sum(step >= round(m * total_steps) for m in cfg.milestones)
    return cfg.lr * cfg.gamma ** passed


def predict(net: UdMamba, images: np.ndarray) -> np.ndarray:
    """
    The argmax class map of a B x Cin x H x W batch.
    :param net: the network
    :param images: the images
    :return: the B x H x W class maps
    """
    with no_grad():
        logits, _ = net(images)
    return np.argmax(logits.data, axis=1)


def evaluate(net: UdMamba, images: np.ndarray, masks: np.ndarray, threads: int = 1) -> List[MaskEvaluation]:
    """
    Evaluates every sample on its own; with threads > 1 samples fan out over a thread pool, results keep sample order.
    The inspection fields of the network are left as they were.
    :param net: the network
    :param images: B x Cin x H x W images
    :param masks: B x H x W class maps
    :param threads: the worker count
    :return: one evaluation per sample
    """
    num_classes = net.config.num_classes

    def run(i: int) -> MaskEvaluation:
        with no_record():
            return evaluate_masks(predict(net, images[i:i + 1])[0], masks[i], num_classes)

    if threads <= 1:
        return [run(i) for i in range(len(images))]
    with concurrent.futures.ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(run, range(len(images))))


def mean_metrics(evaluations: Sequence[MaskEvaluation]) -> SegMetrics:
    return aggregate([e.macro for e in evaluations])


@dataclasses.dataclass
class EpochRecord:
    epoch: int
    l_sup: float
    l_cos: float
    total: float
    val_dsc: float
    lr: float
    alphas: Tuple[float, float, float, float]


@dataclasses.dataclass
class TrainResult:
    net: UdMamba
    history: List[EpochRecord]
    step_losses: List[float]
    best_val_dsc: float
    final_loss: float
    final_train_dsc: Optional[float] = None
    val_metrics: Optional[SegMetrics] = None


def load_experiment_data(cfg: ExperimentConfig) -> Dataset:
    if cfg.dataset:
        return load_dataset(cfg.dataset)
    return Dataset.from_samples(generate_synthetic(cfg.data), cfg.data)


def train(
        cfg: ExperimentConfig,
        dataset: Optional[Dataset] = None,
        output_dir: Union[str, pathlib.Path, None] = None,
        progress: bool = False
) -> TrainResult:
    """
    Trains a network from scratch.
    :param cfg: the experiment config
    :param dataset: the data (loaded or synthesized from cfg when omitted)
    :param output_dir: the run directory for logs and checkpoint (nothing is written when omitted)
    :param progress: show a progress bar
    :return:
    """
    cfg.validate()
    dataset = dataset if dataset is not None else load_experiment_data(cfg)
    train_images, train_masks = dataset.subset("train")
    val_images, val_masks = dataset.subset("val")
    if len(train_images) == 0:
        raise fail(LOGGER, ConfigError, "empty training split", "expected: at least one training sample")
    if len(val_images) == 0:
        LOGGER.warning("empty validation split: validating on the training split")
        val_images, val_masks = train_images, train_masks

    run_dir = None
    if output_dir is not None:
        run_dir = pathlib.Path(output_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        (run_dir / CONFIG_FILE).write_text(json.dumps(cfg.info, indent=2))

    tc = cfg.train
    net = UdMamba(cfg.network)
    optimizer = SGD(net.parameters(), tc.momentum)
    rng = np.random.default_rng(tc.seed)
    steps_per_epoch = math.ceil(len(train_images) / tc.batch_size)
    total_steps = tc.epochs * steps_per_epoch
    LOGGER.info(
        f"training {net.parameter_size()} parameters on {len(train_images)} samples: "
        f"{tc.epochs} epochs, {total_steps} steps"
    )

    history, step_losses = [], []
    best = -math.inf
    val_metrics = None
    step = 0
    for epoch in range(1, tc.epochs + 1):
        order = rng.permutation(len(train_images))
        sums = np.zeros(3)
        batches = [order[i:i + tc.batch_size] for i in range(0, len(order), tc.batch_size)]
        lr = lr_at(step, total_steps, tc)
        for batch in tqdm(batches, desc=f"epoch {epoch}/{tc.epochs}", disable=not progress, leave=False):
            lr = lr_at(step, total_steps, tc)
            try:
                l_sup, l_cos, loss = _loss(net, train_images[batch], train_masks[batch], cfg)
                optimizer.zero_grad()
                backward(loss)
                optimizer.step(lr)
            except NumericError as e:
                raise fail(LOGGER, NumericError, "training diverged", f"epoch: {epoch}", f"step: {step}", *e.args)
            values = (float(l_sup.data), float(l_cos.data), float(loss.data))
            sums += values
            step_losses.append(values[2])
            LOGGER.debug(f"step {step}: l_sup={values[0]:.6f} l_cos={values[1]:.6f} lr={lr:g}")
            step += 1

        val_metrics = mean_metrics(evaluate(net, val_images, val_masks, tc.threads))
        means = sums / len(batches)
        record = EpochRecord(epoch, *means, val_metrics.dsc, lr, tuple(float(a) for a in net.alphas()))
        history.append(record)
        LOGGER.info(
            f"epoch {epoch}: l_sup={record.l_sup:.4f} l_cos={record.l_cos:.4f} total={record.total:.4f} "
            f"val_dsc={record.val_dsc:.4f} alphas={[round(a, 4) for a in record.alphas]}"
        )

        if run_dir is not None:
            append_csv(run_dir / TRAIN_LOG, TRAIN_LOG_HEADER, [
                (epoch, record.l_sup, record.l_cos, record.total, record.val_dsc, record.lr)
            ])
            append_csv(run_dir / ALPHA_TRACE, ALPHA_TRACE_HEADER, [(epoch,) + record.alphas])
        if record.val_dsc > best:
            best = record.val_dsc
            if run_dir is not None:
                write_checkpoint(run_dir / BEST_CHECKPOINT, cfg.info, net.state_dict())

    final_train_dsc = None
    if tc.eval_train:
        final_train_dsc = mean_metrics(evaluate(net, train_images, train_masks, tc.threads)).dsc
    return TrainResult(net, history, step_losses, best, step_losses[-1], final_train_dsc, val_metrics)


def _loss(net: UdMamba, images: np.ndarray, masks: np.ndarray, cfg: ExperimentConfig) -> Tuple[Tensor, Tensor, Tensor]:
    logits, aux = net(images)
    l_sup = supervised_loss(logits, masks, cfg.loss)
    l_cos = consistency_loss(aux) if cfg.train.lcos else Tensor(0.0)
    loss = total_loss(l_sup, l_cos, cfg.loss)
    if not np.isfinite(loss.data):
        raise fail(LOGGER, NumericError, "non-finite loss", f"obtained: {float(loss.data)}")
    return l_sup, l_cos, loss


def load_network(path: Union[str, pathlib.Path]) -> Tuple[UdMamba, ExperimentConfig]:
    """
    Rebuilds a network from a checkpoint.
    :param path: the checkpoint file
    :return: the network and its experiment config
    """
    config, state = read_checkpoint(path)
    cfg = ExperimentConfig.from_dict(config)
    net = UdMamba(cfg.network)
    net.load_state_dict(state)
    return net, cfg


def _with_preset(name: str) -> Callable[[ExperimentConfig], ExperimentConfig]:
    def modify(cfg: ExperimentConfig) -> ExperimentConfig:
        preset = ABLATION_PRESETS[name]
        return dataclasses.replace(
            cfg,
            network=apply_preset(cfg.network, preset),
            train=dataclasses.replace(cfg.train, lcos=preset.lcos)
        )
    return modify


def _with_ssm(**changes) -> Callable[[ExperimentConfig], ExperimentConfig]:
    def modify(cfg: ExperimentConfig) -> ExperimentConfig:
        ssm = dataclasses.replace(cfg.network.ssm, **changes)
        return dataclasses.replace(cfg, network=dataclasses.replace(cfg.network, ssm=ssm))
    return modify


def study_variants(study: str) -> Dict[str, Callable[[ExperimentConfig], ExperimentConfig]]:
    """
    The variants of an ablation study:

    - components: the eight scan component presets;
    - metrics: the uncertainty statistics;
    - regions: pixel, static 2/4/8 and the two dynamic block rankings.
    :param study: the study name
    :return: the ordered {variant: config modifier}
    """
    if study == "components":
        return OrderedDict((name, _with_preset(name)) for name in ABLATION_PRESETS)
    if study == "metrics":
        return OrderedDict((m.value, _with_ssm(metric=m)) for m in UncertaintyMetric)
    if study == "regions":
        return OrderedDict([
            ("pixel", _with_ssm(block=BlockUncertaintyConfig())),
            ("static-2", _with_ssm(block=BlockUncertaintyConfig(BlockMode.STATIC, 2))),
            ("static-4", _with_ssm(block=BlockUncertaintyConfig(BlockMode.STATIC, 4))),
            ("static-8", _with_ssm(block=BlockUncertaintyConfig(BlockMode.STATIC, 8))),
            ("dynamic-proportional", _with_ssm(block=BlockUncertaintyConfig(BlockMode.DYNAMIC_PROPORTIONAL))),
            ("dynamic-inverse", _with_ssm(block=BlockUncertaintyConfig(BlockMode.DYNAMIC_INVERSE))),
        ])
    raise fail(
        LOGGER, ConfigError,
        "invalid study",
        "expected: components, metrics or regions",
        f"obtained: {study}"
    )


ABLATION_STUDIES = ("components", "metrics", "regions")
ABLATION_HEADER = ("study", "variant", "seed", "val_dsc", "val_iou", "val_acc")


def run_ablation(
        study: str,
        seeds: Sequence[int],
        base: ExperimentConfig,
        dataset: Optional[Dataset] = None,
        progress: bool = False
) -> List[tuple]:
    """
    Trains every variant of a study with every seed.
    :param study: the study name
    :param seeds: the network/optimizer seeds
    :param base: the config the variants modify
    :param dataset: the data (loaded or synthesized from base when omitted)
    :param progress: show progress bars
    :return: rows of (study, variant, seed, val_dsc, val_iou, val_acc)
    """
    variants = study_variants(study)
    dataset = dataset if dataset is not None else load_experiment_data(base)
    rows = []
    for name, modify in variants.items():
        for seed in seeds:
            cfg = modify(base)
            cfg = dataclasses.replace(
                cfg,
                network=dataclasses.replace(cfg.network, seed=seed),
                train=dataclasses.replace(cfg.train, seed=seed, eval_train=False)
            )
            LOGGER.info(f"ablation {study}: variant {name}, seed {seed}")
            metrics = train(cfg, dataset, progress=progress).val_metrics
            rows.append((study, name, seed, metrics.dsc, metrics.iou, metrics.acc))
    return rows


def ablation_means(rows: Sequence[tuple]) -> Dict[str, float]:
    """
    The mean val DSC of every variant, in first appearance order.
    :param rows: the ablation rows
    :return:
    """
    values: Dict[str, List[float]] = OrderedDict()
    for _, name, _, dsc, _, _ in rows:
        values.setdefault(name, []).append(dsc)
    return OrderedDict((name, float(np.mean(v))) for name, v in values.items())


def mean_gap_report(rows: Sequence[tuple]) -> str:
    """
    Reports every variant's mean val DSC and its gap to the reference variant: the raster baseline for the components
    study, the first variant otherwise.
    :param rows: the ablation rows
    :return: the report text
    """
    means = ablation_means(rows)
    if not means:
        return "no ablation rows\n"
    reference = "raster" if "raster" in means else next(iter(means))
    lines = [f"reference: {reference} (mean val dsc {means[reference]:.4f})"]
    for name, value in means.items():
        gap = value - means[reference]
        lines.append(f"{name}: mean val dsc {value:.4f}, gap {gap:+.4f} ({'above' if gap >= 0 else 'below'})")
    return "\n".join(lines) + "\n"
