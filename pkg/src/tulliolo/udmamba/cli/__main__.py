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
Main module for udmamba-cli implementation.
"""
import argparse
import logging
import sys

from tulliolo.udmamba import __version__ as version
from tulliolo.udmamba.cli import ablate, bench, evaluate, inspection, synth, train

HEADER = (
        "*" * len(f"* udmamba-cli v{version} *") +
        f"\n* udmamba-cli v{version} *\n" +
        "*" * len(f"* udmamba-cli v{version} *") + "\n"
)

LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR")
LOG_FORMAT = "%(asctime)s - %(name)s.%(funcName)s - %(levelname)s - %(message)s"

COMMANDS = (train, evaluate, bench, inspection, synth, ablate)


def main(args=None):
    """
    Initializes the cli and launches commands
    :param args:
    :return:
    """
    if args is None:
        args = sys.argv[1:]

    parser = argparse.ArgumentParser(
        formatter_class=argparse.RawTextHelpFormatter,
        description=f"{HEADER}Uncertainty-driven selective scan segmentation tools"
    )
    parser.add_argument(
        "-v", "--version",
        action="version", version=f"%(prog)s v{version}",
        help="show the version and exit"
    )
    parser.add_argument(
        "-l", "--log-level",
        choices=LOG_LEVELS, default="WARNING",
        help="the logging level (DEFAULT=WARNING)"
    )

    subparsers = parser.add_subparsers(dest="command", required=True, help="list of commands")
    for module in COMMANDS:
        module.init_parser(
            subparsers.add_parser(module.PROG, help=module.HELP)
        )

    # unknown "--key value" pairs are config overrides, for the commands accepting them
    options, extra = parser.parse_known_args(args)
    module = next(m for m in COMMANDS if m.PROG == options.command)
    if extra and not getattr(module, "OVERRIDES", False):
        parser.error(f"unrecognized arguments: {' '.join(extra)}")
    options.overrides = extra

    logging.basicConfig(level=options.log_level, format=LOG_FORMAT, datefmt="%Y-%m-%d %H:%M:%S")
    print(HEADER)

    code = module.run_command(options)
    exit(code)


if __name__ == "__main__":
    main()
