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
import json
from pathlib import Path

from tulliolo.udmamba.losses import LossConfig
from tulliolo.udmamba.network import NetworkConfig
from tulliolo.udmamba.training import ExperimentConfig, TrainConfig
from tulliolo.udmamba.udssm import UdSsmSettings
from tulliolo.udmamba.utils.synthetic import SynthConfig


def load_data(section: str = "") -> dict:
    path = Path(__file__).parent

    with open(f"{path}/data/test_vectors.json") as file:
        data = json.load(file)

    if section:
        data = data[section]
    return data


def expect_error(func, reason: str):
    """
    Runs func and checks that it fails with the given reason (the first error arg).
    :param func: the failing call
    :param reason: the expected reason
    :return: the raised exception
    """
    try:
        func()
        raise AssertionError("the test was successful...")
    except AssertionError:
        raise
    except Exception as e:
        assert e.args[0] == reason, (
            "error mismatch",
            f"expected: {reason}",
            f"obtained: {e.args[0]}"
        )
        return e


def tiny_network(**ssm) -> NetworkConfig:
    """
    Two stages of one UD block, 8 and 16 channels, patch size 2: 16 x 16 inputs.
    """
    return NetworkConfig(
        in_channels=1, num_classes=2, patch_size=2, stage_channels=(8, 16), blocks_per_stage=1,
        ssm=UdSsmSettings(state_size=4, **ssm), seed=0
    )


def tiny_experiment(epochs: int = 2, **ssm) -> ExperimentConfig:
    return ExperimentConfig(
        network=tiny_network(**ssm),
        loss=LossConfig(),
        train=TrainConfig(epochs=epochs, batch_size=4, lr=0.01, threads=1),
        data=SynthConfig(seed=1, count=8, size=16, boundary_noise=0.5, split=(0.5, 0.25, 0.25)),
    )
