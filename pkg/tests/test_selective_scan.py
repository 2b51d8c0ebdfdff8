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
import itertools
import logging
import math

import numpy as np
import pytest

from tests.common import expect_error, load_data
from tulliolo.udmamba import ops
from tulliolo.udmamba.errors import ConfigError, ShapeError
from tulliolo.udmamba.selective_scan import (
    SERIES_THRESHOLD, S6Params, ScanMethod, ScanStep,
    bench_scan, combine, discretize, linear_recurrence, s6_forward, s6_parallel, s6_sequential, selective_scan
)
from tulliolo.udmamba.tensor import Tensor
from tulliolo.udmamba.utils.gradcheck import TOLERANCE, gradcheck

LOGGER = logging.getLogger(__name__)


def scan_inputs(rng, batch=1, length=5, channels=2, state=3):
    return [
        Tensor(rng.standard_normal((batch, length, channels)), requires_grad=True, name="x"),
        Tensor(rng.uniform(0.1, 1.0, (batch, length, channels)), requires_grad=True, name="delta"),
        Tensor(-rng.uniform(0.5, 2.0, (channels, state)), requires_grad=True, name="a"),
        Tensor(rng.standard_normal((batch, length, state)), requires_grad=True, name="b"),
        Tensor(rng.standard_normal((batch, length, state)), requires_grad=True, name="c"),
        Tensor(rng.standard_normal(channels), requires_grad=True, name="d"),
    ]


class TestStatic:
    @pytest.mark.parametrize("iter_data", enumerate(load_data("discretize"), start=1))
    def test_discretize(self, iter_data):
        count, vector = iter_data
        LOGGER.info(f"START test discretize {count}")

        abar, bbar = discretize(vector["delta"], vector["a"], vector["b"])
        assert math.isclose(abar, vector["abar"], rel_tol=1e-12, abs_tol=1e-15), (
            "abar mismatch",
            f"expected: {vector['abar']}",
            f"obtained: {abar}"
        )
        assert math.isclose(bbar, vector["bbar"], rel_tol=1e-12, abs_tol=1e-15), (
            "bbar mismatch",
            f"expected: {vector['bbar']}",
            f"obtained: {bbar}"
        )

        LOGGER.info(f"STOP  test discretize {count}")

    def test_series_branch(self):
        LOGGER.info("START test series branch")

        _, bbar = discretize(1e-8, -1.0, 1.0)
        assert math.isclose(bbar, 1e-8, rel_tol=1e-6), ("series bbar mismatch", bbar)
        _, bbar = discretize(1.0, 0.0, 2.0)
        assert bbar == 2.0, ("a = 0 is not handled by the series", bbar)

        # both sides of the switch agree
        below = discretize(SERIES_THRESHOLD * 0.999, -1.0, 1.0)[1]
        above = discretize(SERIES_THRESHOLD * 1.001, -1.0, 1.0)[1]
        assert abs(below / (SERIES_THRESHOLD * 0.999) - above / (SERIES_THRESHOLD * 1.001)) < 1e-8, (
            "discontinuous bbar",
            f"obtained: {below}, {above}"
        )

        LOGGER.info("STOP  test series branch")

    def test_hand_recurrence(self):
        LOGGER.info("START test hand recurrence")

        # abar = bbar = 0.5, C = 1, no direct term
        y = selective_scan(
            np.ones((1, 2, 1)), np.full((1, 2, 1), math.log(2)), -np.ones((1, 1)), np.ones((1, 2, 1)), np.ones((1, 2, 1))
        )
        assert np.allclose(y.data.reshape(-1), [0.5, 0.75], atol=1e-14), (
            "recurrence mismatch",
            "expected: [0.5, 0.75]",
            f"obtained: {y.data.reshape(-1)}"
        )

        LOGGER.info("STOP  test hand recurrence")

    def test_zero_input(self):
        LOGGER.info("START test zero input")

        params = S6Params(4, 3, rng=np.random.default_rng(1))
        y = s6_sequential(np.zeros((6, 4)), params)
        assert y.shape == (6, 4) and np.array_equal(y.data, np.zeros((6, 4))), "zero input gives non-zero output"

        LOGGER.info("STOP  test zero input")

    def test_s6_init(self):
        LOGGER.info("START test s6 init")

        params = S6Params(32, 8, rng=np.random.default_rng(0))
        assert params.dt_rank == 2
        assert np.allclose(params.a, -np.tile(np.arange(1, 9), (32, 1))), "A initialization mismatch"
        delta = np.log1p(np.exp(params.dt_bias.data))
        assert np.all(delta >= 0.001 - 1e-12) and np.all(delta <= 0.1 + 1e-12), (
            "initial delta out of range",
            f"obtained: [{delta.min()}, {delta.max()}]"
        )
        assert len(params.parameters()) == 7 and len(S6Params(4, use_d=False).parameters()) == 6

        LOGGER.info("STOP  test s6 init")

    def test_single_step(self):
        LOGGER.info("START test single step")

        params = S6Params(3, 2, rng=np.random.default_rng(2))
        x = np.random.default_rng(3).standard_normal((1, 3))
        assert np.array_equal(s6_sequential(x, params).data, s6_parallel(x, params).data), "L = 1 mismatch"

        LOGGER.info("STOP  test single step")

    def test_combine_associativity(self):
        LOGGER.info("START test combine associativity")

        rng = np.random.default_rng(4)
        steps = [ScanStep(rng.uniform(0, 1, 6), rng.standard_normal(6)) for _ in range(3)]
        left = combine(combine(steps[0], steps[1]), steps[2])
        right = combine(steps[0], combine(steps[1], steps[2]))
        assert np.allclose(left.abar, right.abar, atol=1e-12) and np.allclose(left.bbar_x, right.bbar_x, atol=1e-12), (
            "combine is not associative"
        )
        h = rng.standard_normal(6)
        assert np.allclose(left(h), steps[2](steps[1](steps[0](h))), atol=1e-12), "combine order mismatch"

        LOGGER.info("STOP  test combine associativity")

    def test_state_relabeling(self):
        LOGGER.info("START test state relabeling")

        x, delta, a, bm, cm, d = (t.data for t in scan_inputs(np.random.default_rng(5), 2, 7, 3, 4))
        perm = np.array([2, 0, 3, 1])
        y = selective_scan(x, delta, a, bm, cm, d)
        relabeled = selective_scan(x, delta, a[:, perm], bm[..., perm], cm[..., perm], d)
        assert np.allclose(y.data, relabeled.data, atol=1e-12), "output depends on state labels"

        LOGGER.info("STOP  test state relabeling")

    def test_state_bound(self):
        LOGGER.info("START test state bound")

        rng = np.random.default_rng(6)
        abar = rng.uniform(0.0, 0.9, (1, 200, 5))
        bx = rng.uniform(-1.0, 1.0, (1, 200, 5))
        h = linear_recurrence(abar, bx)
        assert np.all(np.abs(h) <= 1.0 / (1.0 - 0.9) + 1e-12), "state exceeds its bound"

        LOGGER.info("STOP  test state bound")

    @pytest.mark.parametrize("iter_data", enumerate(ScanMethod, start=1))
    def test_scan_gradcheck(self, iter_data):
        count, method = iter_data
        LOGGER.info(f"START test scan gradcheck {count}: {method.value}")

        result = gradcheck(
            lambda *args: selective_scan(*args, method=method), scan_inputs(np.random.default_rng(count), 2, 5, 2, 3)
        )
        assert result.passed, (
            "gradient mismatch",
            f"expected: relative error < {TOLERANCE}",
            f"obtained: {result.max_rel_error} at {result.worst}"
        )

        LOGGER.info(f"STOP  test scan gradcheck {count}")

    @pytest.mark.parametrize("iter_data", enumerate((True, False), start=1))
    def test_s6_gradcheck(self, iter_data):
        count, use_d = iter_data
        LOGGER.info(f"START test s6 gradcheck {count}")

        params = S6Params(3, 2, use_d=use_d, rng=np.random.default_rng(7))
        x = Tensor(np.random.default_rng(8).standard_normal((1, 6, 3)), requires_grad=True, name="x")
        result = gradcheck(
            lambda x, *_: ops.mean(s6_forward(x, params)), [x] + params.parameters()
        )
        assert result.passed, (
            "gradient mismatch",
            f"expected: relative error < {TOLERANCE}",
            f"obtained: {result.max_rel_error} at {result.worst}"
        )

        LOGGER.info(f"STOP  test s6 gradcheck {count}")

    def test_bench_rows(self):
        LOGGER.info("START test bench rows")

        rows = bench_scan([8, 16], channels=2, state_size=2, repeats=1)
        assert [row[0] for row in rows] == [8, 16] and all(row[1] > 0 and row[2] > 0 for row in rows), (
            "bench rows mismatch", rows
        )

        LOGGER.info("STOP  test bench rows")


class TestError:
    @pytest.mark.parametrize(
        "iter_data",
        enumerate([
            (lambda: discretize(-0.1, -1.0, 1.0), "invalid delta", ConfigError),
            (lambda: S6Params(0), "invalid s6 size", ConfigError),
            (lambda: s6_forward(np.zeros((1, 4, 3)), S6Params(2)), "invalid sequence shape", ShapeError),
            (
                lambda: selective_scan(np.zeros((1, 4, 2)), np.ones((1, 4, 2)), -np.ones((2, 3)),
                                       np.zeros((1, 4, 2)), np.zeros((1, 4, 3))),
                "invalid scan shape", ShapeError
            ),
            (lambda: linear_recurrence(np.ones((1, 3)), np.ones((1, 4))), "invalid scan operands", ShapeError),
        ], start=1)
    )
    def test_error(self, iter_data):
        count, (func, reason, kind) = iter_data
        LOGGER.info(f"START test error {count}: {reason}")

        e = expect_error(func, reason)
        assert isinstance(e, kind)

        LOGGER.info(f"STOP  test error {count}")


class TestDynamic:
    @pytest.mark.parametrize("iter_data", enumerate([1, 2, 3, 7, 64, 100, 257, 300, 511, 1000], start=1))
    def test_parallel_matches_sequential(self, iter_data):
        count, length = iter_data
        LOGGER.info(f"START test parallel matches sequential {count}: L={length}")

        rng = np.random.default_rng(length)
        abar = rng.uniform(0.0, 1.0, (2, length, 3, 4))
        bx = rng.standard_normal(abar.shape)
        sequential = linear_recurrence(abar, bx, ScanMethod.SEQUENTIAL)
        parallel = linear_recurrence(abar, bx, ScanMethod.PARALLEL)
        assert np.max(np.abs(parallel - sequential)) < 1e-10, (
            "scan mismatch",
            f"obtained: {np.max(np.abs(parallel - sequential))}"
        )

        LOGGER.info(f"STOP  test parallel matches sequential {count}")

    def test_s6_methods(self):
        LOGGER.info("START test s6 methods")

        params = S6Params(4, 8, rng=np.random.default_rng(9))
        x = np.random.default_rng(10).standard_normal((257, 4))
        difference = np.max(np.abs(s6_parallel(x, params).data - s6_sequential(x, params).data))
        assert difference < 1e-10, ("s6 method mismatch", f"obtained: {difference}")

        LOGGER.info("STOP  test s6 methods")

    @pytest.mark.slow
    @pytest.mark.parametrize(
        "iter_data", enumerate(itertools.product((1, 4, 16), (1, 7, 64, 257, 4096), range(7)), start=1)
    )
    def test_parallel_oracle(self, iter_data):
        count, (channels, length, seed) = iter_data
        LOGGER.info(f"START test parallel oracle {count}: C={channels}, L={length}")

        rng = np.random.default_rng(1000 * channels + length + seed)
        params = S6Params(channels, int(rng.integers(1, 9)), rng=rng)
        x = rng.standard_normal((length, channels))
        difference = np.max(np.abs(s6_parallel(x, params).data - s6_sequential(x, params).data))
        assert difference < 1e-10, ("s6 method mismatch", f"obtained: {difference}")

        LOGGER.info(f"STOP  test parallel oracle {count}")

    @pytest.mark.slow
    def test_linear_scaling(self):
        LOGGER.info("START test linear scaling")

        rows = dict((length, (seq, par)) for length, seq, par in bench_scan([4096, 8192, 16384, 32768], repeats=5))
        for length in (4096, 16384):
            for method, column in (("sequential", 0), ("parallel", 1)):
                ratio = rows[2 * length][column] / rows[length][column]
                assert ratio <= 2.5, (
                    f"{method} scan is not linear",
                    "expected: t(2L) / t(L) <= 2.5",
                    f"obtained: {ratio} at L={length}"
                )

        LOGGER.info("STOP  test linear scaling")
