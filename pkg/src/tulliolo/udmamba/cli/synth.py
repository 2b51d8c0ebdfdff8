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
import argparse
import json
import logging
import pathlib

from tulliolo.udmamba.cli.command import command, config_from_options
from tulliolo.udmamba.errors import ConfigError, fail
from tulliolo.udmamba.utils.synthetic import SynthConfig, generate_synthetic, save_dataset

PROG = "synth"
HELP = "generate a synthetic dataset (generator fields can be overridden with --key value)"
OVERRIDES = True

LOGGER = logging.getLogger(__name__)


def init_parser(parser: argparse.ArgumentParser):
    """
    Initializes the synth parser.
    :param parser: the root parser
    :return:
    """
    parser.add_argument(
        "output",
        type=pathlib.Path,
        help="the dataset directory"
    )
    parser.add_argument(
        "-c", "--config",
        type=pathlib.Path,
        help="a JSON generator config, or an experiment config with a data section"
    )


@command("synth")
def run_command(options: argparse.Namespace):
    """
    Generates a dataset using the following options:

    - output: the dataset directory;
    - -c, --config: the JSON config;
    - --key value: generator overrides.
    :param options: the full list of cli options
    :return:
    """
    config = config_from_options(options)
    config = config.get("data", config)
    try:
        cfg = SynthConfig.from_dict(config)
    except TypeError as e:
        raise fail(LOGGER, ConfigError, "invalid config value", f"obtained: {e}")
    print(f"generating with config:\n{json.dumps(cfg.info, indent=2)}")

    directory = save_dataset(options.output, generate_synthetic(cfg), cfg)
    print("\nsynth success!")
    print(directory)
