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
import pathlib

from tulliolo.udmamba.cli.command import command, config_from_options
from tulliolo.udmamba.training import BEST_CHECKPOINT, ExperimentConfig, train

PROG = "train"
HELP = "train a network (any config field can be overridden with --section.key value)"
OVERRIDES = True


def init_parser(parser: argparse.ArgumentParser):
    """
    Initializes the train parser.
    :param parser: the root parser
    :return:
    """
    parser.add_argument(
        "-c", "--config",
        type=pathlib.Path,
        help="a JSON experiment config (DEFAULT=built-in defaults)"
    )
    parser.add_argument(
        "-o", "--output",
        type=pathlib.Path,
        default=pathlib.Path("runs/train"),
        help="the run directory (DEFAULT=runs/train)"
    )
    parser.add_argument(
        "-t", "--threads",
        type=int,
        help="the evaluation worker count, 1 is bit-reproducible (DEFAULT=train.threads)"
    )
    parser.add_argument(
        "-p", "--progress",
        action="store_true",
        help="show a progress bar"
    )


@command("train")
def run_command(options: argparse.Namespace):
    """
    Trains a network using the following options:

    - -c, --config: the JSON experiment config;
    - -o, --output: the run directory;
    - -t, --threads: the evaluation worker count;
    - --section.key value: config overrides.
    :param options: the full list of cli options
    :return:
    """
    config = config_from_options(options)
    if options.threads is not None:
        config.setdefault("train", {})["threads"] = options.threads
    cfg = ExperimentConfig.from_dict(config)
    print(f"training with config:\n{json.dumps(cfg.info, indent=2)}")

    result = train(cfg, output_dir=options.output, progress=options.progress)
    print("\ntrain success!")
    print(f"best val dsc: {result.best_val_dsc:.4f}")
    print(f"final loss: {result.final_loss!r}")
    if result.final_train_dsc is not None:
        print(f"final train dsc: {result.final_train_dsc!r}")
    print(f"checkpoint: {options.output / BEST_CHECKPOINT}")
