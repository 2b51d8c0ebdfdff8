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

from tests.common import expect_error
from tulliolo.udmamba import ops
from tulliolo.udmamba.errors import ContractError, NumericError, PermutationError, ShapeError
from tulliolo.udmamba.tensor import Graph, Tensor, backward, is_grad_enabled, no_grad
from tulliolo.udmamba.utils.gradcheck import TOLERANCE, gradcheck

LOGGER = logging.getLogger(__name__)

RNG = np.random.default_rng(7)


def leaf(*shape, low=-1.0, high=1.0, name=""):
    return Tensor(RNG.uniform(low, high, size=shape), requires_grad=True, name=name)


def perm_of(size, seed=0):
    return np.random.default_rng(seed).permutation(size)


# every differentiable op, as (name, function, inputs)
OPS = [
    ("add", lambda x, y: ops.add(x, y), lambda: [leaf(2, 3), leaf(3)]),
    ("sub", lambda x, y: ops.sub(x, y), lambda: [leaf(2, 3), leaf(2, 1)]),
    ("mul", lambda x, y: ops.mul(x, y), lambda: [leaf(2, 3), leaf(2, 3)]),
    ("div", lambda x, y: ops.div(x, y), lambda: [leaf(2, 3), leaf(2, 3, low=0.5, high=2.0)]),
    ("neg", lambda x: ops.neg(x), lambda: [leaf(4)]),
    ("exp", lambda x: ops.exp(x), lambda: [leaf(2, 2)]),
    ("log", lambda x: ops.log(x), lambda: [leaf(2, 2, low=0.5, high=2.0)]),
    ("sqrt", lambda x: ops.sqrt(x), lambda: [leaf(5, low=0.5, high=2.0)]),
    ("sigmoid", lambda x: ops.sigmoid(x), lambda: [leaf(2, 3, low=-4, high=4)]),
    ("softplus", lambda x: ops.softplus(x), lambda: [leaf(2, 3, low=-4, high=4)]),
    ("silu", lambda x: ops.silu(x), lambda: [leaf(2, 3, low=-4, high=4)]),
    ("clamp_min", lambda x: ops.clamp_min(x, 0.1), lambda: [leaf(2, 3, low=0.3, high=1.0)]),
    ("sum", lambda x: ops.sum(x, axis=1), lambda: [leaf(2, 3, 4)]),
    ("mean", lambda x: ops.mean(x, axis=(0, 2)), lambda: [leaf(2, 3, 4)]),
    ("std", lambda x: ops.std(x, axis=0), lambda: [leaf(4, 3)]),
    ("std_keepdims", lambda x: ops.std(x, axis=1, keepdims=True), lambda: [leaf(2, 5)]),
    ("reshape", lambda x: ops.reshape(x, (3, 4)), lambda: [leaf(2, 6)]),
    ("transpose", lambda x: ops.transpose(x, (2, 0, 1)), lambda: [leaf(2, 3, 4)]),
    ("concat", lambda x, y: ops.concat([x, y], axis=1), lambda: [leaf(2, 3, 2), leaf(2, 1, 2)]),
    ("matmul", lambda x, y: ops.matmul(x, y), lambda: [leaf(2, 3, 4), leaf(4, 5)]),
    ("linear", lambda x, w, b: ops.linear(x, w, b), lambda: [leaf(2, 5, 3), leaf(4, 3), leaf(4)]),
    ("linear_channels", lambda x, w: ops.linear(x, w, axis=1), lambda: [leaf(2, 3, 2, 2), leaf(5, 3)]),
    ("softmax", lambda x: ops.softmax(x, axis=1), lambda: [leaf(2, 4, 3)]),
    ("log_softmax", lambda x: ops.log_softmax(x, axis=1), lambda: [leaf(2, 4, 3)]),
    ("layer_norm", lambda x, g, b: ops.layer_norm(x, g, b, axis=1), lambda: [leaf(2, 4, 3, 3), leaf(4), leaf(4)]),
    ("depthwise_conv3x3", lambda x, w: ops.depthwise_conv3x3(x, w), lambda: [leaf(2, 3, 4, 5), leaf(3, 3, 3)]),
    (
        "conv_patchify", lambda x, w, b: ops.conv_patchify(x, w, b, 2),
        lambda: [leaf(1, 2, 4, 6), leaf(3, 2, 2, 2), leaf(3)]
    ),
    ("upsample_nearest", lambda x: ops.upsample_nearest(x, 2), lambda: [leaf(1, 2, 3, 2)]),
    ("permute_gather", lambda x: ops.permute_gather(x, perm_of(12)), lambda: [leaf(2, 3, 3, 4)]),
    ("permute_scatter", lambda s: ops.permute_scatter(s, perm_of(6, 1), 2, 3), lambda: [leaf(1, 6, 3)]),
]

MAP = np.arange(24, dtype=float).reshape(1, 2, 3, 4)
CENTER = np.zeros((2, 3, 3))
CENTER[:, 1, 1] = 1.0

# forward values, as (name, function, expected, absolute tolerance)
VALUES = [
    ("silu 0", lambda: ops.silu(np.array([0.0])), [0.0], 1e-15),
    ("silu 1", lambda: ops.silu(np.array([1.0])), [0.7310585786300049], 1e-15),
    (
        "layer_norm constant",
        lambda: ops.layer_norm(np.full(3, 2.0), np.array([1.0, 2.0, 3.0]), np.array([0.5, -1.0, 4.0]), axis=0),
        [0.5, -1.0, 4.0], 1e-15
    ),
    ("layer_norm pair", lambda: ops.layer_norm(np.array([1.0, -1.0]), np.ones(2), np.zeros(2), axis=0), [1.0, -1.0], 1e-5),
    ("depthwise identity kernel", lambda: ops.depthwise_conv3x3(MAP, CENTER), MAP, 1e-15),
    (
        "depthwise ones kernel", lambda: ops.depthwise_conv3x3(np.ones((1, 1, 3, 4)), np.ones((1, 3, 3))),
        [[[[4.0, 6.0, 6.0, 4.0], [6.0, 9.0, 9.0, 6.0], [4.0, 6.0, 6.0, 4.0]]]], 1e-15
    ),
    (
        "permute_gather identity", lambda: ops.permute_gather(MAP, np.arange(12)),
        MAP.reshape(1, 2, 12).transpose(0, 2, 1), 0.0
    ),
]


class TestStatic:
    @pytest.mark.parametrize("iter_data", enumerate(OPS, start=1))
    def test_gradcheck(self, iter_data):
        count, (name, fn, inputs) = iter_data
        LOGGER.info(f"START test gradcheck {count}: {name}")

        result = gradcheck(fn, inputs())
        assert result.passed, (
            "gradient mismatch",
            f"expected: relative error < {TOLERANCE}",
            f"obtained: {result.max_rel_error} at {result.worst}"
        )

        LOGGER.info(f"STOP  test gradcheck {count}")

    def test_graph_order(self):
        LOGGER.info("START test graph order")

        x = leaf(3, name="x")
        y = ops.mul(x, x)
        z = ops.add(ops.exp(y), y)
        graph = Graph.from_output(z)
        position = {id(node): i for i, node in enumerate(graph.nodes)}
        for node in graph.nodes:
            if node._ctx is not None:
                for parent in node._ctx.parents:
                    if parent.requires_grad:
                        assert position[id(parent)] < position[id(node)], (
                            "graph order mismatch",
                            "expected: parents before children"
                        )
        assert graph.nodes[-1] is z and graph.leaves == [x], (
            "graph content mismatch",
            f"obtained: {len(graph)} nodes, {len(graph.leaves)} leaves"
        )

        LOGGER.info("STOP  test graph order")

    def test_shared_subexpression(self):
        LOGGER.info("START test shared subexpression")

        x = Tensor(np.array([2.0, 3.0]), requires_grad=True)
        y = ops.mul(x, x)
        loss = ops.sum(ops.add(y, y))
        loss.backward()
        assert np.allclose(x.grad, 4 * x.data), (
            "gradient mismatch",
            f"expected: {4 * x.data}",
            f"obtained: {x.grad}"
        )

        LOGGER.info("STOP  test shared subexpression")

    def test_no_grad(self):
        LOGGER.info("START test no_grad")

        x = leaf(3)
        with no_grad():
            assert not is_grad_enabled()
            y = ops.exp(x)
        assert is_grad_enabled() and not y.requires_grad and y._ctx is None, (
            "graph recorded under no_grad"
        )

        LOGGER.info("STOP  test no_grad")

    def test_std_zero_dispersion(self):
        LOGGER.info("START test std zero dispersion")

        x = Tensor(np.ones((3, 2)), requires_grad=True)
        ops.sum(ops.std(x, axis=0)).backward()
        assert np.array_equal(x.grad, np.zeros((3, 2))), (
            "zero dispersion gradient mismatch",
            f"obtained: {x.grad}"
        )

        LOGGER.info("STOP  test std zero dispersion")

    def test_gather_scatter_identity(self):
        LOGGER.info("START test gather scatter identity")

        x = RNG.standard_normal((2, 3, 4, 5))
        perm = np.stack([perm_of(20, 3), perm_of(20, 4)])
        restored = ops.permute_scatter(ops.permute_gather(x, perm), perm, 4, 5)
        assert np.array_equal(restored.data, x), "gather then scatter is not the identity"

        LOGGER.info("STOP  test gather scatter identity")

    @pytest.mark.parametrize("iter_data", enumerate(VALUES, start=1))
    def test_values(self, iter_data):
        count, (name, fn, expected, atol) = iter_data
        LOGGER.info(f"START test values {count}: {name}")

        obtained = fn().data
        assert np.allclose(obtained, expected, rtol=0, atol=atol), (
            "value mismatch",
            f"expected: {expected}",
            f"obtained: {obtained}"
        )

        LOGGER.info(f"STOP  test values {count}")

    def test_depthwise_conv_loops(self):
        LOGGER.info("START test depthwise conv loops")

        x = RNG.standard_normal((2, 5, 4))
        w = RNG.standard_normal((2, 3, 3))
        expected = np.zeros_like(x)
        for c in range(2):
            for row in range(5):
                for col in range(4):
                    for i in range(3):
                        for j in range(3):
                            r, s = row + i - 1, col + j - 1
                            if 0 <= r < 5 and 0 <= s < 4:
                                expected[c, row, col] += w[c, i, j] * x[c, r, s]
        obtained = ops.depthwise_conv3x3(x, w).data
        assert obtained.shape == x.shape and np.allclose(obtained, expected, rtol=0, atol=1e-12), (
            "convolution mismatch",
            f"obtained: max difference {np.max(np.abs(obtained - expected))}"
        )

        LOGGER.info("STOP  test depthwise conv loops")

    def test_reversal_twice(self):
        LOGGER.info("START test reversal twice")

        x = RNG.standard_normal((1, 3, 2, 4))
        reverse = np.arange(8)[::-1]
        once = ops.permute_gather(x, reverse)
        # back to B x C x H x W, still in reversed order
        twice = ops.permute_gather(np.transpose(once.data, (0, 2, 1)).reshape(x.shape), reverse)
        assert np.array_equal(twice.data, ops.permute_gather(x, np.arange(8)).data), (
            "reversal applied twice is not the identity"
        )

        LOGGER.info("STOP  test reversal twice")


ERRORS = [
    ("non-scalar loss", ContractError, lambda: backward(ops.mul(leaf(3), 2.0))),
    ("not a scalar", ContractError, lambda: leaf(2).item()),
    ("invalid rank", ShapeError, lambda: Tensor(np.zeros((1, 1, 1, 1, 1)))),
    ("non-finite value", NumericError, lambda: ops.log(Tensor(np.zeros(2)))),
    ("invalid matmul shapes", ShapeError, lambda: ops.matmul(leaf(2, 3), leaf(2, 3))),
    ("invalid linear shapes", ShapeError, lambda: ops.linear(leaf(2, 3), leaf(4, 2))),
    ("invalid affine shape", ShapeError, lambda: ops.layer_norm(leaf(2, 3), leaf(2), leaf(3))),
    ("invalid concat shapes", ShapeError, lambda: ops.concat([leaf(2, 3), leaf(3, 3)], axis=1)),
    ("invalid depthwise kernel", ShapeError, lambda: ops.depthwise_conv3x3(leaf(1, 2, 3, 3), leaf(3, 3, 3))),
    ("invalid patch size", ShapeError, lambda: ops.conv_patchify(leaf(1, 1, 5, 4), leaf(2, 1, 2, 2), leaf(2), 2)),
    ("invalid permutation", PermutationError, lambda: ops.permute_gather(leaf(1, 1, 2, 2), [0, 1, 1, 3])),
    ("invalid permutation", PermutationError, lambda: ops.permute_gather(leaf(1, 1, 2, 2), [0, 1, 2])),
    ("invalid sequence shape", ShapeError, lambda: ops.permute_scatter(leaf(1, 5, 2), np.arange(4), 2, 2)),
]


class TestError:
    @pytest.mark.parametrize("iter_data", enumerate(ERRORS, start=1))
    def test_error(self, iter_data):
        count, (reason, kind, func) = iter_data
        LOGGER.info(f"START test error {count}: {reason}")

        e = expect_error(func, reason)
        assert isinstance(e, kind), (
            "error kind mismatch",
            f"expected: {kind.__name__}",
            f"obtained: {type(e).__name__}"
        )

        LOGGER.info(f"STOP  test error {count}")


class TestDynamic:
    @pytest.mark.parametrize("iter_data", enumerate(range(5), start=1))
    def test_composite_gradcheck(self, iter_data):
        count, seed = iter_data
        LOGGER.info(f"START test composite gradcheck {count}")

        rng = np.random.default_rng(seed)
        x = Tensor(rng.standard_normal((1, 4, 3, 3)), requires_grad=True)
        w = Tensor(rng.standard_normal((4, 4)) * 0.5, requires_grad=True)
        k = Tensor(rng.standard_normal((4, 3, 3)) * 0.3, requires_grad=True)

        def fn(x, w, k):
            h = ops.layer_norm(x, np.ones(4), np.zeros(4), axis=1)
            h = ops.silu(ops.depthwise_conv3x3(ops.linear(h, w, axis=1), k))
            return ops.mean(ops.log_softmax(h, axis=1))

        result = gradcheck(fn, [x, w, k])
        assert result.passed, (
            "gradient mismatch",
            f"expected: relative error < {TOLERANCE}",
            f"obtained: {result.max_rel_error} at {result.worst}"
        )

        LOGGER.info(f"STOP  test composite gradcheck {count}")
