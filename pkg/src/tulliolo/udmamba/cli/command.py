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
import sys
from functools import wraps

from tulliolo.udmamba.errors import NumericError, ParseError
from tulliolo.udmamba.utils.common import load_config, parse_overrides

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_IO = 4


def command(name):
    """
    A decorator wrapping commands in a try/except block with result codes:

    - 0: success;
    - 2: invalid config or input (value and type errors);
    - 3: numeric failure (NaN or infinite values);
    - 4: I/O failure, unreadable or corrupt files included;
    - 1: any other failure.
    :param name:
    :return:
    """
    def decorate(func):
        @wraps(func)
        def wrapper(*args, **kwargs):
            code = EXIT_OK
            try:

                func(*args, **kwargs)

            except (OSError, ParseError) as e:
                print(f"\n{name} failure!\n{str(e)}", file=sys.stderr)
                code = EXIT_IO
            except (TypeError, ValueError) as e:
                print(f"\n{name} failure!\n{str(e)}", file=sys.stderr)
                code = EXIT_CONFIG
            except NumericError as e:
                print(f"\n{name} failure!\n{str(e)}", file=sys.stderr)
                code = EXIT_NUMERIC
            except Exception as e:
                print(f"\n{name} failure!\n{str(e)}", file=sys.stderr)
                code = EXIT_FAILURE
            finally:
                return code

        return wrapper
    return decorate


def config_from_options(options):
    """
    Loads the --config file of a command and applies its --key value overrides.
    :param options: the parsed cli options
    :return: the config dict
    """
    return load_config(getattr(options, "config", None), parse_overrides(getattr(options, "overrides", [])))
