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
Synthetic segmentation samples: textured grayscale images of smooth random blobs whose visible boundary is jittered
around a crisp ground truth mask, and the dataset directory built from them:

- images/NNNN.pgm: the images;
- masks/NNNN.pgm: the class maps (0 background, 1 foreground);
- manifest.json: the generator config, the seed and the train/val/test index lists.
"""
from __future__ import annotations

import dataclasses
import json
import logging
import math
import pathlib
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np
from scipy import ndimage

from tulliolo.udmamba.errors import ConfigError, DataError, fail
from tulliolo.udmamba.utils.pgm import read_pgm_file, write_pgm_file

LOGGER = logging.getLogger(__name__)

FOREGROUND_MIN = 0.05
FOREGROUND_MAX = 0.40
MAX_ATTEMPTS = 1000
HARMONICS = (2, 3, 4, 5)
BACKGROUND_LEVEL = 0.3
FOREGROUND_LEVEL = 0.7
SPLIT_NAMES = ("train", "val", "test")

Sample = Tuple[np.ndarray, np.ndarray]


@dataclasses.dataclass
class SynthConfig:
    """
    boundary_noise is the largest radial offset (pixels) of the visible boundary from the true one; contrast scales
    the smoothed background texture; edge_blur smooths the intensity step.
    """
    seed: int = 0
    count: int = 64
    size: int = 64
    blob_min: int = 1
    blob_max: int = 3
    boundary_noise: float = 2.0
    contrast: float = 0.35
    texture_sigma: float = 1.5
    edge_blur: float = 1.0
    split: Tuple[float, float, float] = (0.75, 0.125, 0.125)

    @classmethod
    def from_dict(cls, value: dict) -> SynthConfig:
        value = dict(value)
        if "split" in value:
            value["split"] = tuple(float(f) for f in value["split"])
        return cls(**value)

    @property
    def info(self) -> dict:
        info = dataclasses.asdict(self)
        info["split"] = list(self.split)
        return info

    def validate(self):
        if self.count < 0 or self.size < 8:
            raise fail(
                LOGGER, ConfigError,
                "invalid synth size",
                "expected: count >= 0, size >= 8",
                f"obtained: {self.count}, {self.size}"
            )
        if not 1 <= self.blob_min <= self.blob_max:
            raise fail(
                LOGGER, ConfigError,
                "invalid blob count",
                "expected: 1 <= blob_min <= blob_max",
                f"obtained: {self.blob_min}, {self.blob_max}"
            )
        if self.boundary_noise < 0 or self.contrast < 0 or self.texture_sigma < 0 or self.edge_blur < 0:
            raise fail(
                LOGGER, ConfigError,
                "invalid synth amplitude",
                "expected: non-negative noise, contrast and blur",
                f"obtained: {self.boundary_noise}, {self.contrast}, {self.texture_sigma}, {self.edge_blur}"
            )
        check_fractions(self.split)


def check_fractions(fractions: Sequence[float]):
    if len(fractions) != len(SPLIT_NAMES) or any(f < 0 for f in fractions) or not math.isclose(sum(fractions), 1.0):
        raise fail(
            LOGGER, ConfigError,
            "invalid split",
            "expected: three non-negative fractions summing to 1",
            f"obtained: {list(fractions)}"
        )


def _blob(rng: np.random.Generator, size: int, noise: float, grid: Tuple[np.ndarray, np.ndarray]):
    rows, cols = grid
    center = rng.uniform(0.2 * size, 0.8 * size, size=2)
    radius = rng.uniform(0.08 * size, 0.22 * size)
    amplitudes = rng.uniform(-1.0, 1.0, size=len(HARMONICS))
    phases = rng.uniform(0.0, 2 * math.pi, size=len(HARMONICS))

    dy, dx = rows - center[0], cols - center[1]
    distance = np.hypot(dy, dx)
    angle = np.arctan2(dy, dx)
    jitter = sum(a * np.cos(k * angle + p) for a, k, p in zip(amplitudes, HARMONICS, phases))
    jitter = jitter / max(float(np.abs(amplitudes).sum()), 1e-12)
    return distance < radius, distance < radius + noise * jitter


def generate_sample(rng: np.random.Generator, cfg: SynthConfig) -> Sample:
    """
    Draws one (image, mask) pair with a foreground fraction in [5%, 40%].
    :param rng: the random generator
    :param cfg: the generator config
    :return: the H x W uint8 image and mask
    """
    grid = np.mgrid[0:cfg.size, 0:cfg.size].astype(np.float64)
    for _ in range(MAX_ATTEMPTS):
        mask = np.zeros((cfg.size, cfg.size), dtype=bool)
        visible = np.zeros_like(mask)
        for _ in range(int(rng.integers(cfg.blob_min, cfg.blob_max + 1))):
            crisp, jittered = _blob(rng, cfg.size, cfg.boundary_noise, (grid[0], grid[1]))
            mask |= crisp
            visible |= jittered
        texture = rng.standard_normal((cfg.size, cfg.size))
        if FOREGROUND_MIN <= mask.mean() <= FOREGROUND_MAX:
            break
    else:
        raise fail(
            LOGGER, DataError,
            "foreground out of range",
            f"expected: fraction in [{FOREGROUND_MIN}, {FOREGROUND_MAX}]",
            f"obtained: no sample in {MAX_ATTEMPTS} attempts"
        )

    image = np.where(visible, FOREGROUND_LEVEL, BACKGROUND_LEVEL)
    if cfg.edge_blur > 0:
        image = ndimage.gaussian_filter(image, cfg.edge_blur, mode="nearest")
    if cfg.contrast > 0:
        if cfg.texture_sigma > 0:
            texture = ndimage.gaussian_filter(texture, cfg.texture_sigma, mode="wrap")
            texture /= max(float(texture.std()), 1e-12)
        image = image + cfg.contrast * 0.25 * texture
    image = np.round(np.clip(image, 0.0, 1.0) * 255).astype(np.uint8)
    return image, mask.astype(np.uint8)


def generate_synthetic(cfg: SynthConfig = None) -> List[Sample]:
    """
    Generates cfg.count samples; the same config always yields the same bytes.
    :param cfg: the generator config
    :return: the (image, mask) pairs
    """
    cfg = cfg or SynthConfig()
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    samples = [generate_sample(rng, cfg) for _ in range(cfg.count)]
    LOGGER.debug(f"generated {len(samples)} samples of {cfg.size} x {cfg.size}")
    return samples


def split_indices(count: int, fractions: Sequence[float], seed: int) -> Dict[str, List[int]]:
    """
    Shuffles 0..count-1 with the seed and cuts it into train/val/test: val and test take the floor of their share,
    train the rest. Each list is sorted.
    :param count: the sample count
    :param fractions: the train/val/test fractions
    :param seed: the shuffle seed
    :return:
    """
    check_fractions(fractions)
    order = np.random.default_rng(seed).permutation(count)
    n_val = int(math.floor(count * fractions[1]))
    n_test = int(math.floor(count * fractions[2]))
    n_train = count - n_val - n_test
    cuts = (order[:n_train], order[n_train:n_train + n_val], order[n_train + n_val:])
    return {name: sorted(int(i) for i in cut) for name, cut in zip(SPLIT_NAMES, cuts)}


@dataclasses.dataclass
class Dataset:
    images: List[np.ndarray]
    masks: List[np.ndarray]
    splits: Dict[str, List[int]]
    seed: int = 0

    def __len__(self) -> int:
        return len(self.images)

    def subset(self, name: str) -> Tuple[np.ndarray, np.ndarray]:
        """
        Stacks a split into B x 1 x H x W float images in [0, 1] and B x H x W int masks.
        :param name: train, val or test
        :return:
        """
        if name not in self.splits:
            raise fail(LOGGER, ConfigError, "invalid split name", f"expected: {list(self.splits)}", f"obtained: {name}")
        indices = self.splits[name]
        if not indices:
            size = self.images[0].shape if self.images else (0, 0)
            return np.zeros((0, 1) + size), np.zeros((0,) + size, dtype=np.int64)
        images = np.stack([self.images[i] for i in indices]).astype(np.float64)[:, None] / 255.0
        masks = np.stack([self.masks[i] for i in indices]).astype(np.int64)
        return images, masks

    @classmethod
    def from_samples(cls, samples: Sequence[Sample], cfg: SynthConfig) -> Dataset:
        return cls(
            [image for image, _ in samples], [mask for _, mask in samples],
            split_indices(len(samples), cfg.split, cfg.seed), cfg.seed
        )


def save_dataset(directory: Union[str, pathlib.Path], samples: Sequence[Sample], cfg: SynthConfig) -> pathlib.Path:
    """
    Writes images, masks and manifest.
    :param directory: the dataset directory (created if missing)
    :param samples: the (image, mask) pairs
    :param cfg: the generator config
    :return: the dataset directory
    """
    directory = pathlib.Path(directory)
    (directory / "images").mkdir(parents=True, exist_ok=True)
    (directory / "masks").mkdir(parents=True, exist_ok=True)
    for i, (image, mask) in enumerate(samples):
        write_pgm_file(directory / "images" / f"{i:04d}.pgm", image)
        write_pgm_file(directory / "masks" / f"{i:04d}.pgm", mask)
    manifest = {
        "seed": cfg.seed,
        "count": len(samples),
        "config": cfg.info,
        "splits": split_indices(len(samples), cfg.split, cfg.seed),
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2))
    LOGGER.info(f"saved {len(samples)} samples to {directory}")
    return directory


def load_dataset(directory: Union[str, pathlib.Path]) -> Dataset:
    """
    Reads a dataset directory written by save_dataset.
    :param directory: the dataset directory
    :return:
    """
    directory = pathlib.Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    count = int(manifest["count"])
    images = [read_pgm_file(directory / "images" / f"{i:04d}.pgm") for i in range(count)]
    masks = [read_pgm_file(directory / "masks" / f"{i:04d}.pgm") for i in range(count)]
    splits = {name: [int(i) for i in manifest["splits"].get(name, [])] for name in SPLIT_NAMES}
    for name, indices in splits.items():
        if any(not 0 <= i < count for i in indices):
            raise fail(LOGGER, DataError, "invalid split index", f"expected: [0, {count})", f"obtained: {name}")
    return Dataset(images, masks, splits, int(manifest.get("seed", 0)))
