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

import numpy as np

from tulliolo.udmamba.cli.command import command
from tulliolo.udmamba.scan import ScanOrderSet, scan_orders_for, scan_orders_to_csv
from tulliolo.udmamba.training import load_network, predict
from tulliolo.udmamba.udssm import branch_norms
from tulliolo.udmamba.uncertainty import (
    BlockUncertaintyConfig, UncertaintyMetric, channel_uncertainty, uncertainty_to_csv
)
from tulliolo.udmamba.utils.pgm import normalize_to_uint8, read_pgm_file, write_pgm_file

PROG = "inspect"
HELP = "dump the uncertainty maps and scan orders of every UD block for an image"


def init_parser(parser: argparse.ArgumentParser):
    """
    Initializes the inspect parser.
    :param parser: the root parser
    :return:
    """
    parser.add_argument(
        "image",
        type=pathlib.Path,
        help="a PGM image"
    )
    parser.add_argument(
        "checkpoint",
        type=pathlib.Path,
        help="the checkpoint file"
    )
    parser.add_argument(
        "-o", "--output",
        type=pathlib.Path,
        default=pathlib.Path("inspect"),
        help="the dump directory (DEFAULT=inspect)"
    )


def _dump(
        directory: pathlib.Path, name: str, features: np.ndarray, orders: ScanOrderSet, metric: UncertaintyMetric
):
    u = channel_uncertainty(features, metric)
    write_pgm_file(directory / f"{name}.uncertainty.pgm", normalize_to_uint8(u.values))
    (directory / f"{name}.uncertainty.csv").write_text(uncertainty_to_csv(u))
    (directory / f"{name}.orders.csv").write_text(scan_orders_to_csv(orders, features.shape[-1]))


@command("inspect")
def run_command(options: argparse.Namespace):
    """
    Dumps, for the input image and for every UD block:

    - <name>.uncertainty.pgm: the min-max normalized uncertainty map;
    - <name>.uncertainty.csv: the raw map;
    - <name>.orders.csv: the four scan orders;

    plus norms.csv (recovered branch norms of every block) and prediction.pgm.
    :param options: the full list of cli options
    :return:
    """
    net, _ = load_network(options.checkpoint)
    image = read_pgm_file(options.image).astype(np.float64) / 255.0
    images = np.broadcast_to(image, (1, net.config.in_channels) + image.shape).copy()
    options.output.mkdir(parents=True, exist_ok=True)
    settings = net.config.ssm

    orders = scan_orders_for(images[0], settings.metric, BlockUncertaintyConfig(), settings.mode)
    _dump(options.output, "input", images[0], orders, settings.metric)

    prediction = predict(net, images)[0]
    write_pgm_file(options.output / "prediction.pgm", prediction.astype(np.uint8))

    norms = ["block,branch,norm\n"]
    for part, stages in (("encoder", net.encoder), ("decoder", net.decoder)):
        for s, stage in enumerate(stages):
            for b, block in enumerate(stage):
                name = f"{part}.{s}.block.{b}"
                ssm = block.ssm
                _dump(options.output, name, ssm.last_features[0], ssm.last_orders[0], settings.metric)
                norms.extend(
                    f"{name},{i + 1},{norm!r}\n" for i, norm in enumerate(branch_norms(ssm.last_output))
                )
    (options.output / "norms.csv").write_text("".join(norms))
    print("\ninspect success!")
    print(options.output)
