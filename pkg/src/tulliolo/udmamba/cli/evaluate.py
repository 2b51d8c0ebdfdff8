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
import pathlib

from tulliolo.udmamba.cli.command import command
from tulliolo.udmamba.metrics import metrics_report_csv, metrics_report_json
from tulliolo.udmamba.training import evaluate, load_network
from tulliolo.udmamba.utils.synthetic import SPLIT_NAMES, load_dataset

PROG = "eval"
HELP = "evaluate a checkpoint on a dataset split"


def init_parser(parser: argparse.ArgumentParser):
    """
    Initializes the eval parser.
    :param parser: the root parser
    :return:
    """
    parser.add_argument(
        "checkpoint",
        type=pathlib.Path,
        help="the checkpoint file"
    )
    parser.add_argument(
        "dataset",
        type=pathlib.Path,
        help="the dataset directory"
    )
    parser.add_argument(
        "-s", "--split",
        choices=SPLIT_NAMES, default="test",
        help="the evaluated split (DEFAULT=test)"
    )
    parser.add_argument(
        "-o", "--output",
        type=pathlib.Path,
        help="a directory for metrics.csv and metrics.json (DEFAULT=print the csv)"
    )
    parser.add_argument(
        "-t", "--threads",
        type=int, default=1,
        help="the worker count (DEFAULT=1)"
    )


@command("eval")
def run_command(options: argparse.Namespace):
    """
    Evaluates a checkpoint using the following options:

    - checkpoint, dataset: the inputs;
    - -s, --split: the split (DEFAULT=test);
    - -o, --output: the report directory;
    - -t, --threads: the worker count.
    :param options: the full list of cli options
    :return:
    """
    net, _ = load_network(options.checkpoint)
    images, masks = load_dataset(options.dataset).subset(options.split)
    print(f"evaluating {len(images)} {options.split} samples...")
    evaluations = evaluate(net, images, masks, options.threads) if len(images) else []

    report = metrics_report_csv(evaluations)
    if options.output is not None:
        options.output.mkdir(parents=True, exist_ok=True)
        (options.output / "metrics.csv").write_text(report)
        (options.output / "metrics.json").write_text(metrics_report_json(evaluations))
    print("\neval success!")
    print(report, end="")
