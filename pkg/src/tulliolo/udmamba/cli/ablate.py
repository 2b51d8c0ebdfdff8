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

from tulliolo.udmamba.cli.command import command, config_from_options
from tulliolo.udmamba.training import (
    ABLATION_HEADER, ABLATION_STUDIES, ExperimentConfig, mean_gap_report, run_ablation
)
from tulliolo.udmamba.utils.common import csv_line

PROG = "ablate"
HELP = "train every variant of an ablation study over several seeds"
OVERRIDES = True


def init_parser(parser: argparse.ArgumentParser):
    """
    Initializes the ablate parser.
    :param parser: the root parser
    :return:
    """
    parser.add_argument(
        "-s", "--study",
        choices=ABLATION_STUDIES, default=ABLATION_STUDIES[0],
        help=f"the study (DEFAULT={ABLATION_STUDIES[0]})"
    )
    parser.add_argument(
        "-n", "--seeds",
        type=int, nargs="+", default=[0, 1, 2, 3, 4],
        help="the seeds (DEFAULT=0 1 2 3 4)"
    )
    parser.add_argument(
        "-c", "--config",
        type=pathlib.Path,
        help="the base JSON experiment config"
    )
    parser.add_argument(
        "-o", "--output",
        type=pathlib.Path,
        help="a directory for ablation.csv and gap.txt (DEFAULT=print them)"
    )
    parser.add_argument(
        "-p", "--progress",
        action="store_true",
        help="show progress bars"
    )


@command("ablate")
def run_command(options: argparse.Namespace):
    """
    Runs an ablation study using the following options:

    - -s, --study: components, metrics or regions;
    - -n, --seeds: the seeds;
    - -c, --config: the base config;
    - -o, --output: the report directory;
    - --section.key value: config overrides.
    :param options: the full list of cli options
    :return:
    """
    base = ExperimentConfig.from_dict(config_from_options(options))
    print(f"running the {options.study} study over seeds {options.seeds}...")
    rows = run_ablation(options.study, options.seeds, base, progress=options.progress)

    table = ",".join(ABLATION_HEADER) + "\n" + "".join(csv_line(row) for row in rows)
    report = mean_gap_report(rows)
    if options.output is not None:
        options.output.mkdir(parents=True, exist_ok=True)
        (options.output / "ablation.csv").write_text(table)
        (options.output / "gap.txt").write_text(report)
    print("\nablate success!")
    print(table, end="")
    print(report, end="")
