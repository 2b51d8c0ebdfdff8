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
from tulliolo.udmamba.selective_scan import bench_scan

PROG = "bench-scan"
HELP = "time the sequential and parallel scan kernels"


def init_parser(parser: argparse.ArgumentParser):
    """
    Initializes the bench parser.
    :param parser: the root parser
    :return:
    """
    parser.add_argument(
        "-L", "--lengths",
        type=int, nargs="+", default=[1024, 2048],
        help="the sequence lengths (DEFAULT=1024 2048)"
    )
    parser.add_argument(
        "-c", "--channels",
        type=int, default=16,
        help="the channel count (DEFAULT=16)"
    )
    parser.add_argument(
        "-r", "--repeats",
        type=int, default=3,
        help="timings per kernel, the best is kept (DEFAULT=3)"
    )
    parser.add_argument(
        "-o", "--output",
        type=pathlib.Path,
        help="a csv file (DEFAULT=print the csv)"
    )


@command("bench-scan")
def run_command(options: argparse.Namespace):
    """
    Times both scan kernels using the following options:

    - -L, --lengths: the sequence lengths;
    - -c, --channels: the channel count;
    - -r, --repeats: the repeats;
    - -o, --output: the csv file.
    :param options: the full list of cli options
    :return:
    """
    rows = bench_scan(options.lengths, channels=options.channels, repeats=options.repeats)
    report = "L,sequential_ns,parallel_ns\n" + "".join(f"{length},{seq},{par}\n" for length, seq, par in rows)
    if options.output is not None:
        options.output.write_text(report)
    print("\nbench-scan success!")
    print(report, end="")
