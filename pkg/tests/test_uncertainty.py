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
import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from tests.common import expect_error, load_data
from tulliolo.udmamba.errors import ConfigError, NumericError, ShapeError
from tulliolo.udmamba.uncertainty import (
    BlockMode, BlockUncertaintyConfig, UncertaintyMap, UncertaintyMetric,
    block_pool_uncertainty, block_sort, channel_uncertainty, inverse_permutation, resolve_block_size,
    sort_descending, uncertainty_to_csv
)

LOGGER = logging.getLogger(__name__)

features = hnp.arrays(
    np.float64,
    st.tuples(st.integers(1, 6), st.integers(1, 6), st.integers(1, 6)),
    elements=st.floats(-100, 100, allow_nan=False, allow_infinity=False)
)


class TestStatic:
    @pytest.mark.parametrize("iter_data", enumerate(load_data("uncertainty"), start=1))
    def test_metric_vectors(self, iter_data):
        count, vector = iter_data
        LOGGER.info(f"START test metric vectors {count}")

        x = np.array(vector["features"])
        for name in ("std", "variance", "mad", "range"):
            u = channel_uncertainty(x, UncertaintyMetric(name))
            assert u.shape == (1, 1) and np.isclose(u.values[0, 0], vector[name]), (
                f"{name} mismatch",
                f"expected: {vector[name]}",
                f"obtained: {u.values}"
            )

        LOGGER.info(f"STOP  test metric vectors {count}")

    def test_entropy(self):
        LOGGER.info("START test entropy")

        uniform = channel_uncertainty(np.zeros((4, 2, 2)), UncertaintyMetric.ENTROPY)
        assert np.allclose(uniform.values, np.log(4)), (
            "entropy mismatch",
            f"expected: {np.log(4)}",
            f"obtained: {uniform.values}"
        )
        peaked = channel_uncertainty(np.array([[[50.0]], [[0.0]]]), UncertaintyMetric.ENTROPY)
        assert peaked.values[0, 0] < 1e-12, ("entropy of a peaked softmax is not 0", peaked.values)

        LOGGER.info("STOP  test entropy")

    def test_default_metric(self):
        LOGGER.info("START test default metric")

        assert UncertaintyMetric.DEFAULT == UncertaintyMetric.STD
        assert BlockMode.DEFAULT == BlockMode.PIXEL
        for metric in UncertaintyMetric:
            assert metric.description

        LOGGER.info("STOP  test default metric")

    def test_stable_ties(self):
        LOGGER.info("START test stable ties")

        sort = sort_descending(UncertaintyMap(np.array([[2.0, 7.0, 2.0], [7.0, 2.0, 7.0]])))
        assert sort.idx.tolist() == [1, 3, 5, 0, 2, 4], (
            "tie order mismatch",
            "expected: [1, 3, 5, 0, 2, 4]",
            f"obtained: {sort.idx.tolist()}"
        )
        assert sort.sorted_values.tolist() == [7.0, 7.0, 7.0, 2.0, 2.0, 2.0]

        LOGGER.info("STOP  test stable ties")

    @pytest.mark.parametrize("iter_data", enumerate(load_data("block_sort"), start=1))
    def test_block_sort(self, iter_data):
        count, vector = iter_data
        LOGGER.info(f"START test block sort {count}")

        sort = block_sort(UncertaintyMap(np.array(vector["uncertainty"])), vector["a"])
        assert sort.idx.tolist() == vector["idx"], (
            "block ranking mismatch",
            f"expected: {vector['idx']}",
            f"obtained: {sort.idx.tolist()}"
        )

        LOGGER.info(f"STOP  test block sort {count}")

    def test_block_pool(self):
        LOGGER.info("START test block pool")

        u = UncertaintyMap(np.arange(16, dtype=np.float64).reshape(4, 4))
        pooled = block_pool_uncertainty(u, BlockUncertaintyConfig(BlockMode.STATIC, 2))
        assert pooled.values.tolist() == [[2.5, 4.5], [10.5, 12.5]], (
            "pooled map mismatch",
            f"obtained: {pooled.values.tolist()}"
        )
        same = block_pool_uncertainty(u, BlockUncertaintyConfig())
        assert np.array_equal(same.values, u.values), "pixel mode changed the map"

        LOGGER.info("STOP  test block pool")

    @pytest.mark.parametrize(
        "iter_data",
        enumerate([
            (BlockUncertaintyConfig(BlockMode.PIXEL, 4), 16, 1),
            (BlockUncertaintyConfig(BlockMode.STATIC, 4), 16, 4),
            (BlockUncertaintyConfig(BlockMode.STATIC, 32), 16, 16),
            (BlockUncertaintyConfig(BlockMode.DYNAMIC_PROPORTIONAL, a_v_max=32, a_v_min=4), 16, 4),
            (BlockUncertaintyConfig(BlockMode.DYNAMIC_PROPORTIONAL, a_v_max=32, a_v_min=4), 4, 1),
            (BlockUncertaintyConfig(BlockMode.DYNAMIC_INVERSE, a_v_max=32, a_v_min=4), 8, 4),
            (BlockUncertaintyConfig(BlockMode.DYNAMIC_INVERSE, a_v_max=32, a_v_min=4), 32, 1),
        ], start=1)
    )
    def test_resolve_block_size(self, iter_data):
        count, (cfg, extent, expected) = iter_data
        LOGGER.info(f"START test resolve block size {count}")

        a = resolve_block_size(cfg, extent)
        assert a == expected, (
            "block size mismatch",
            f"expected: {expected}",
            f"obtained: {a}"
        )

        LOGGER.info(f"STOP  test resolve block size {count}")

    def test_block_config_dict(self):
        LOGGER.info("START test block config dict")

        cfg = BlockUncertaintyConfig.from_dict({"mode": "static", "a": 4})
        assert cfg.mode == BlockMode.STATIC and cfg.a == 4
        assert BlockUncertaintyConfig.from_dict(cfg.info) == cfg

        LOGGER.info("STOP  test block config dict")

    def test_csv(self):
        LOGGER.info("START test csv")

        text = uncertainty_to_csv(UncertaintyMap(np.array([[0.5, 1.0]])))
        assert text == "row,col,value\n0,0,0.5\n0,1,1.0\n", ("csv mismatch", text)

        LOGGER.info("STOP  test csv")


class TestError:
    def test_nan_feature(self):
        LOGGER.info("START test nan feature")

        x = np.zeros((2, 2, 2))
        x[1, 0, 1] = np.nan
        e = expect_error(lambda: channel_uncertainty(x), "non-finite value")
        assert isinstance(e, NumericError)

        LOGGER.info("STOP  test nan feature")

    def test_nan_map(self):
        LOGGER.info("START test nan map")

        e = expect_error(lambda: sort_descending(UncertaintyMap(np.array([[1.0, np.nan]]))), "non-finite value")
        assert isinstance(e, NumericError)

        LOGGER.info("STOP  test nan map")

    def test_feature_shape(self):
        LOGGER.info("START test feature shape")

        e = expect_error(lambda: channel_uncertainty(np.zeros((2, 2))), "invalid feature shape")
        assert isinstance(e, ShapeError)

        LOGGER.info("STOP  test feature shape")

    @pytest.mark.parametrize(
        "iter_data",
        enumerate([
            (lambda: resolve_block_size(BlockUncertaintyConfig(BlockMode.STATIC, 3), 16), "invalid block size"),
            (lambda: resolve_block_size(BlockUncertaintyConfig(BlockMode.DYNAMIC_INVERSE), 16), "invalid block config"),
            (
                lambda: block_pool_uncertainty(
                    UncertaintyMap(np.zeros((4, 6))), BlockUncertaintyConfig(BlockMode.STATIC, 4)
                ),
                "invalid block size"
            ),
        ], start=1)
    )
    def test_block_errors(self, iter_data):
        count, (func, reason) = iter_data
        LOGGER.info(f"START test block errors {count}")

        e = expect_error(func, reason)
        assert isinstance(e, ConfigError)

        LOGGER.info(f"STOP  test block errors {count}")


class TestDynamic:
    @settings(max_examples=50, deadline=None)
    @given(x=features, metric=st.sampled_from(list(UncertaintyMetric)))
    def test_ranking_order(self, x, metric):
        u = channel_uncertainty(x, metric)
        sort = sort_descending(u)
        flat = u.values.reshape(-1)

        assert sorted(sort.idx.tolist()) == list(range(flat.size)), "ranking is not a permutation"
        assert np.all(np.diff(sort.sorted_values) <= 0), "ranking is not descending"
        assert np.array_equal(flat[sort.idx], sort.sorted_values), "values do not follow the ranking"
        for k in range(1, flat.size):
            if sort.sorted_values[k] == sort.sorted_values[k - 1]:
                assert sort.idx[k] > sort.idx[k - 1], "ties are not in row-major order"

    @settings(max_examples=50, deadline=None)
    @given(x=features)
    def test_dispersion_bounds(self, x):
        std = channel_uncertainty(x, UncertaintyMetric.STD).values
        mad = channel_uncertainty(x, UncertaintyMetric.MAD).values
        variance = channel_uncertainty(x, UncertaintyMetric.VARIANCE).values
        entropy = channel_uncertainty(x, UncertaintyMetric.ENTROPY).values

        assert np.all(std >= 0) and np.all(mad <= std + 1e-9), "mad exceeds std"
        assert np.allclose(std * std, variance), "variance is not the squared std"
        assert np.all(entropy >= -1e-12) and np.all(entropy <= np.log(x.shape[0]) + 1e-9), "entropy out of range"

    @settings(max_examples=50, deadline=None)
    @given(size=st.integers(1, 64), seed=st.integers(0, 2 ** 16))
    def test_inverse_permutation(self, size, seed):
        idx = np.random.default_rng(seed).permutation(size)
        inverse = inverse_permutation(idx)
        assert np.array_equal(inverse[idx], np.arange(size))
        assert np.array_equal(idx[inverse], np.arange(size))

    @settings(max_examples=30, deadline=None)
    @given(
        values=hnp.arrays(np.float64, (8, 8), elements=st.floats(0, 10, allow_nan=False)),
        a=st.sampled_from([1, 2, 4, 8])
    )
    def test_block_sort_groups(self, values, a):
        sort = block_sort(UncertaintyMap(values), a)
        assert sorted(sort.idx.tolist()) == list(range(64)), "block ranking is not a permutation"
        blocks = (sort.idx // 8 // a) * (8 // a) + (sort.idx % 8) // a
        for start in range(0, 64, a * a):
            assert len(set(blocks[start:start + a * a].tolist())) == 1, "a block is split in the ranking"
        assert np.all(np.diff(sort.sorted_values) <= 1e-12), "block means are not descending"
