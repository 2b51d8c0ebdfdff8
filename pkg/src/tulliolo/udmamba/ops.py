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
The differentiable operation set consumed by the network.

Every operation is a `Function` with an analytic backward; the functional wrappers at the bottom of each section are
the public API. Channel-first maps are B x C x H x W; sequences are B x L x C.
"""
from __future__ import annotations

import logging
from typing import Optional, Sequence

import numpy as np

from tulliolo.udmamba.errors import ConfigError, PermutationError, ShapeError, fail
from tulliolo.udmamba.tensor import Function, Tensor, as_tensor

LOGGER = logging.getLogger(__name__)


def unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """
    Sums grad over the axes numpy broadcasting added or stretched to reach shape.
    :param grad: the broadcast gradient
    :param shape: the original operand shape
    :return:
    """
    if grad.shape == shape:
        return grad
    for _ in range(grad.ndim - len(shape)):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def channel_axis(ndim: int) -> int:
    """
    The channel axis of a tensor by rank: C, L x C, C x H x W, B x C x H x W.
    :param ndim: the tensor rank
    :return:
    """
    return {1: 0, 2: 1, 3: 0, 4: 1}[ndim]


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    positive = x >= 0
    out[positive] = 1.0 / (1.0 + np.exp(-x[positive]))
    z = np.exp(x[~positive])
    out[~positive] = z / (1.0 + z)
    return out


# --- elementwise -----------------------------------------------------------------------------------------------------

class Add(Function):
    @staticmethod
    def forward(ctx, x, y):
        ctx.save_for_backward(x.shape, y.shape)
        return x + y

    @staticmethod
    def backward(ctx, grad):
        shape_x, shape_y = ctx.saved
        return unbroadcast(grad, shape_x), unbroadcast(grad, shape_y)


class Sub(Function):
    @staticmethod
    def forward(ctx, x, y):
        ctx.save_for_backward(x.shape, y.shape)
        return x - y

    @staticmethod
    def backward(ctx, grad):
        shape_x, shape_y = ctx.saved
        return unbroadcast(grad, shape_x), unbroadcast(-grad, shape_y)


class Mul(Function):
    @staticmethod
    def forward(ctx, x, y):
        ctx.save_for_backward(x, y)
        return x * y

    @staticmethod
    def backward(ctx, grad):
        x, y = ctx.saved
        return unbroadcast(grad * y, x.shape), unbroadcast(grad * x, y.shape)


class Div(Function):
    @staticmethod
    def forward(ctx, x, y):
        ctx.save_for_backward(x, y)
        return x / y

    @staticmethod
    def backward(ctx, grad):
        x, y = ctx.saved
        return unbroadcast(grad / y, x.shape), unbroadcast(-grad * x / (y * y), y.shape)


class Neg(Function):
    @staticmethod
    def forward(ctx, x):
        return -x

    @staticmethod
    def backward(ctx, grad):
        return (-grad,)


class Exp(Function):
    @staticmethod
    def forward(ctx, x):
        out = np.exp(x)
        ctx.save_for_backward(out)
        return out

    @staticmethod
    def backward(ctx, grad):
        out, = ctx.saved
        return (grad * out,)


class Log(Function):
    @staticmethod
    def forward(ctx, x):
        ctx.save_for_backward(x)
        return np.log(x)

    @staticmethod
    def backward(ctx, grad):
        x, = ctx.saved
        return (grad / x,)


class Sqrt(Function):
    @staticmethod
    def forward(ctx, x):
        out = np.sqrt(x)
        ctx.save_for_backward(out)
        return out

    @staticmethod
    def backward(ctx, grad):
        out, = ctx.saved
        return (grad * 0.5 / out,)


class Sigmoid(Function):
    @staticmethod
    def forward(ctx, x):
        out = _stable_sigmoid(x)
        ctx.save_for_backward(out)
        return out

    @staticmethod
    def backward(ctx, grad):
        out, = ctx.saved
        return (grad * out * (1.0 - out),)


class Softplus(Function):
    @staticmethod
    def forward(ctx, x):
        ctx.save_for_backward(x)
        return np.logaddexp(0.0, x)

    @staticmethod
    def backward(ctx, grad):
        x, = ctx.saved
        return (grad * _stable_sigmoid(x),)


class Silu(Function):
    @staticmethod
    def forward(ctx, x):
        s = _stable_sigmoid(x)
        ctx.save_for_backward(x, s)
        return x * s

    @staticmethod
    def backward(ctx, grad):
        x, s = ctx.saved
        return (grad * s * (1.0 + x * (1.0 - s)),)


class ClampMin(Function):
    @staticmethod
    def forward(ctx, x, minimum: float = 0.0):
        mask = x >= minimum
        ctx.save_for_backward(mask)
        return np.where(mask, x, minimum)

    @staticmethod
    def backward(ctx, grad):
        mask, = ctx.saved
        return (grad * mask,)


def add(x, y) -> Tensor:
    return Add.apply(x, y)


def sub(x, y) -> Tensor:
    return Sub.apply(x, y)


def mul(x, y) -> Tensor:
    return Mul.apply(x, y)


def div(x, y) -> Tensor:
    return Div.apply(x, y)


def neg(x) -> Tensor:
    return Neg.apply(x)


def exp(x) -> Tensor:
    return Exp.apply(x)


def log(x) -> Tensor:
    return Log.apply(x)


def sqrt(x) -> Tensor:
    return Sqrt.apply(x)


def sigmoid(x) -> Tensor:
    return Sigmoid.apply(x)


def softplus(x) -> Tensor:
    return Softplus.apply(x)


def silu(x) -> Tensor:
    """
    x * sigmoid(x), elementwise.
    :param x: the input tensor
    :return:
    """
    return Silu.apply(x)


def clamp_min(x, minimum: float) -> Tensor:
    return ClampMin.apply(x, minimum=minimum)


# --- reductions ------------------------------------------------------------------------------------------------------

def _expand(grad: np.ndarray, shape: tuple, axis, keepdims: bool) -> np.ndarray:
    if axis is not None and not keepdims:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        grad = np.expand_dims(grad, tuple(a % len(shape) for a in axes))
    return np.broadcast_to(grad, shape)


def _count(shape: tuple, axis) -> int:
    if axis is None:
        return int(np.prod(shape))
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    return int(np.prod([shape[a] for a in axes]))


class Sum(Function):
    @staticmethod
    def forward(ctx, x, axis=None, keepdims=False):
        ctx.save_for_backward(x.shape)
        return np.sum(x, axis=axis, keepdims=keepdims)

    @staticmethod
    def backward(ctx, grad):
        shape, = ctx.saved
        return (_expand(grad, shape, ctx.kwargs.get("axis"), ctx.kwargs.get("keepdims", False)).copy(),)


class Mean(Function):
    @staticmethod
    def forward(ctx, x, axis=None, keepdims=False):
        ctx.save_for_backward(x.shape)
        return np.mean(x, axis=axis, keepdims=keepdims)

    @staticmethod
    def backward(ctx, grad):
        shape, = ctx.saved
        axis = ctx.kwargs.get("axis")
        return (_expand(grad, shape, axis, ctx.kwargs.get("keepdims", False)) / _count(shape, axis),)


class Std(Function):
    """Population standard deviation (divides by the reduced count)."""
    @staticmethod
    def forward(ctx, x, axis=None, keepdims=False):
        mu = np.mean(x, axis=axis, keepdims=True)
        out = np.sqrt(np.mean((x - mu) ** 2, axis=axis, keepdims=True))
        ctx.save_for_backward(x, mu, out)
        return out if keepdims else np.squeeze(out, axis=axis)

    @staticmethod
    def backward(ctx, grad):
        x, mu, out = ctx.saved
        axis = ctx.kwargs.get("axis")
        grad = np.reshape(grad, out.shape)
        # zero dispersion has no direction; its subgradient is 0
        scale = np.divide(grad, _count(x.shape, axis) * out, out=np.zeros_like(out), where=out > 0)
        return (scale * (x - mu),)


def sum(x, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    return Sum.apply(x, axis=axis, keepdims=keepdims)


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    return Mean.apply(x, axis=axis, keepdims=keepdims)


def std(x, axis=None, keepdims: bool = False) -> Tensor:
    return Std.apply(x, axis=axis, keepdims=keepdims)


# --- shape -----------------------------------------------------------------------------------------------------------

class Reshape(Function):
    @staticmethod
    def forward(ctx, x, shape=()):
        ctx.save_for_backward(x.shape)
        return x.reshape(shape)

    @staticmethod
    def backward(ctx, grad):
        shape, = ctx.saved
        return (grad.reshape(shape),)


class Transpose(Function):
    @staticmethod
    def forward(ctx, x, axes=()):
        return np.transpose(x, axes or None)

    @staticmethod
    def backward(ctx, grad):
        axes = ctx.kwargs.get("axes") or tuple(reversed(range(grad.ndim)))
        return (np.transpose(grad, np.argsort(axes)),)


class Concat(Function):
    @staticmethod
    def forward(ctx, *xs, axis=0):
        ctx.save_for_backward([x.shape[axis] for x in xs])
        return np.concatenate(xs, axis=axis)

    @staticmethod
    def backward(ctx, grad):
        extents, = ctx.saved
        return tuple(np.split(grad, np.cumsum(extents)[:-1], axis=ctx.kwargs.get("axis", 0)))


def reshape(x, shape: Sequence[int]) -> Tensor:
    return Reshape.apply(x, shape=tuple(shape))


def transpose(x, axes: Sequence[int] = ()) -> Tensor:
    return Transpose.apply(x, axes=tuple(axes))


def concat(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    shapes = [as_tensor(x).shape for x in xs]
    reference = [extent for a, extent in enumerate(shapes[0]) if a != axis % len(shapes[0])]
    for shape in shapes[1:]:
        if [extent for a, extent in enumerate(shape) if a != axis % len(shape)] != reference:
            raise fail(
                LOGGER, ShapeError,
                "invalid concat shapes",
                f"axis: {axis}",
                f"obtained: {shapes}"
            )
    return Concat.apply(*xs, axis=axis)


# --- linear algebra --------------------------------------------------------------------------------------------------

class MatMul(Function):
    @staticmethod
    def forward(ctx, x, y):
        ctx.save_for_backward(x, y)
        return np.matmul(x, y)

    @staticmethod
    def backward(ctx, grad):
        x, y = ctx.saved
        gx = np.matmul(grad, np.swapaxes(y, -1, -2))
        gy = np.matmul(np.swapaxes(x, -1, -2), grad)
        return unbroadcast(gx, x.shape), unbroadcast(gy, y.shape)


class Linear(Function):
    """Contracts `axis` of x with weight (out x in) and adds bias (out)."""
    @staticmethod
    def forward(ctx, x, weight, bias=None, axis=-1):
        moved = np.moveaxis(x, axis, -1)
        out = moved @ weight.T
        if bias is not None:
            out = out + bias
        ctx.save_for_backward(moved, weight)
        return np.moveaxis(out, -1, axis)

    @staticmethod
    def backward(ctx, grad):
        moved, weight = ctx.saved
        axis = ctx.kwargs.get("axis", -1)
        grad = np.moveaxis(grad, axis, -1)
        gx = np.moveaxis(grad @ weight, -1, axis)
        gw = grad.reshape(-1, grad.shape[-1]).T @ moved.reshape(-1, moved.shape[-1])
        gb = grad.reshape(-1, grad.shape[-1]).sum(axis=0)
        return (gx, gw, gb) if len(ctx.parents) == 3 else (gx, gw)


def matmul(x, y) -> Tensor:
    x, y = as_tensor(x), as_tensor(y)
    if x.ndim < 2 or y.ndim < 2 or x.shape[-1] != y.shape[-2]:
        raise fail(
            LOGGER, ShapeError,
            "invalid matmul shapes",
            f"obtained: {x.shape} @ {y.shape}"
        )
    return MatMul.apply(x, y)


def linear(x, weight, bias=None, axis: int = -1) -> Tensor:
    """
    An affine map over one axis: for channel-first maps use axis=1, for sequences axis=-1.
    :param x: the input tensor
    :param weight: out x in weights
    :param bias: optional out bias
    :param axis: the contracted axis
    :return:
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if weight.ndim != 2 or x.shape[axis] != weight.shape[1]:
        raise fail(
            LOGGER, ShapeError,
            "invalid linear shapes",
            f"expected: axis {axis} of extent {weight.shape[-1]}",
            f"obtained: {x.shape}"
        )
    if bias is None:
        return Linear.apply(x, weight, axis=axis)
    return Linear.apply(x, weight, bias, axis=axis)


# --- normalization and activation ------------------------------------------------------------------------------------

class Softmax(Function):
    @staticmethod
    def forward(ctx, x, axis=1):
        shifted = x - np.max(x, axis=axis, keepdims=True)
        e = np.exp(shifted)
        out = e / np.sum(e, axis=axis, keepdims=True)
        ctx.save_for_backward(out)
        return out

    @staticmethod
    def backward(ctx, grad):
        out, = ctx.saved
        axis = ctx.kwargs.get("axis", 1)
        return (out * (grad - np.sum(grad * out, axis=axis, keepdims=True)),)


class LogSoftmax(Function):
    @staticmethod
    def forward(ctx, x, axis=1):
        shifted = x - np.max(x, axis=axis, keepdims=True)
        out = shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))
        ctx.save_for_backward(out)
        return out

    @staticmethod
    def backward(ctx, grad):
        out, = ctx.saved
        axis = ctx.kwargs.get("axis", 1)
        return (grad - np.exp(out) * np.sum(grad, axis=axis, keepdims=True),)


class LayerNorm(Function):
    @staticmethod
    def forward(ctx, x, gamma, beta, eps=1e-5, axis=1):
        mu = np.mean(x, axis=axis, keepdims=True)
        sigma = np.sqrt(np.var(x, axis=axis, keepdims=True) + eps)
        xhat = (x - mu) / sigma
        shape = [1] * x.ndim
        shape[axis] = x.shape[axis]
        ctx.save_for_backward(xhat, sigma, gamma.reshape(shape), shape)
        return xhat * gamma.reshape(shape) + beta.reshape(shape)

    @staticmethod
    def backward(ctx, grad):
        xhat, sigma, gamma, shape = ctx.saved
        axis = ctx.kwargs.get("axis", 1)
        reduce = tuple(a for a in range(grad.ndim) if a != axis)
        dxhat = grad * gamma
        dx = (
            dxhat
            - np.mean(dxhat, axis=axis, keepdims=True)
            - xhat * np.mean(dxhat * xhat, axis=axis, keepdims=True)
        ) / sigma
        dgamma = np.sum(grad * xhat, axis=reduce).reshape(-1)
        dbeta = np.sum(grad, axis=reduce).reshape(-1)
        return dx, dgamma, dbeta


def softmax(x, axis: int = 1) -> Tensor:
    return Softmax.apply(x, axis=axis)


def log_softmax(x, axis: int = 1) -> Tensor:
    return LogSoftmax.apply(x, axis=axis)


def layer_norm(x, gamma, beta, eps: float = 1e-5, axis: Optional[int] = None) -> Tensor:
    """
    Normalizes every position to zero mean and unit variance over the channel axis, then applies gamma and beta.
    :param x: the input tensor
    :param gamma: per-channel scale
    :param beta: per-channel shift
    :param eps: the variance regularizer, > 0
    :param axis: the normalized axis (DEFAULT is the channel axis for the rank)
    :return:
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    axis = channel_axis(x.ndim) if axis is None else axis
    channels = x.shape[axis]
    if gamma.shape != (channels,) or beta.shape != (channels,):
        raise fail(
            LOGGER, ShapeError,
            "invalid affine shape",
            f"expected: ({channels},)",
            f"obtained: gamma {gamma.shape}, beta {beta.shape}"
        )
    if eps <= 0:
        raise fail(LOGGER, ConfigError, "invalid eps", "expected: > 0", f"obtained: {eps}")
    return LayerNorm.apply(x, gamma, beta, eps=eps, axis=axis)


# --- spatial ---------------------------------------------------------------------------------------------------------

class DepthwiseConv3x3(Function):
    @staticmethod
    def forward(ctx, x, w):
        _, _, height, width = x.shape
        padded = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
        out = np.zeros_like(x)
        for i in range(3):
            for j in range(3):
                out += w[None, :, i, j, None, None] * padded[:, :, i:i + height, j:j + width]
        ctx.save_for_backward(padded, w, height, width)
        return out

    @staticmethod
    def backward(ctx, grad):
        padded, w, height, width = ctx.saved
        gpadded = np.zeros_like(padded)
        gw = np.zeros_like(w)
        for i in range(3):
            for j in range(3):
                gpadded[:, :, i:i + height, j:j + width] += w[None, :, i, j, None, None] * grad
                gw[:, i, j] = np.sum(grad * padded[:, :, i:i + height, j:j + width], axis=(0, 2, 3))
        return gpadded[:, :, 1:-1, 1:-1], gw


class ConvPatchify(Function):
    """A k x k convolution with stride k (non-overlapping patches)."""
    @staticmethod
    def forward(ctx, x, weight, bias, kernel=2):
        batch, channels, height, width = x.shape
        rows, cols = height // kernel, width // kernel
        patches = x.reshape(batch, channels, rows, kernel, cols, kernel).transpose(0, 2, 4, 1, 3, 5)
        patches = patches.reshape(batch, rows, cols, channels * kernel * kernel)
        flat = weight.reshape(weight.shape[0], -1)
        out = patches @ flat.T + bias
        ctx.save_for_backward(patches, flat, x.shape, weight.shape)
        return out.transpose(0, 3, 1, 2)

    @staticmethod
    def backward(ctx, grad):
        patches, flat, x_shape, w_shape = ctx.saved
        kernel = ctx.kwargs.get("kernel", 2)
        batch, channels, height, width = x_shape
        rows, cols = height // kernel, width // kernel
        grad = grad.transpose(0, 2, 3, 1)
        gw = (grad.reshape(-1, grad.shape[-1]).T @ patches.reshape(-1, patches.shape[-1])).reshape(w_shape)
        gb = grad.reshape(-1, grad.shape[-1]).sum(axis=0)
        gpatches = (grad @ flat).reshape(batch, rows, cols, channels, kernel, kernel)
        gx = gpatches.transpose(0, 3, 1, 4, 2, 5).reshape(x_shape)
        return gx, gw, gb


class UpsampleNearest(Function):
    @staticmethod
    def forward(ctx, x, factor=2):
        return np.repeat(np.repeat(x, factor, axis=2), factor, axis=3)

    @staticmethod
    def backward(ctx, grad):
        factor = ctx.kwargs.get("factor", 2)
        batch, channels, height, width = grad.shape
        grad = grad.reshape(batch, channels, height // factor, factor, width // factor, factor)
        return (grad.sum(axis=(3, 5)),)


def depthwise_conv3x3(x, w) -> Tensor:
    """
    A per-channel 3 x 3 convolution, zero padding 1, stride 1.
    :param x: B x C x H x W (or C x H x W) input
    :param w: C x 3 x 3 kernels
    :return: the convolved map, same shape as x
    """
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim == 3:
        return reshape(depthwise_conv3x3(reshape(x, (1,) + x.shape), w), x.shape)
    if x.ndim != 4 or w.shape != (x.shape[1], 3, 3):
        raise fail(
            LOGGER, ShapeError,
            "invalid depthwise kernel",
            f"expected: ({x.shape[1] if x.ndim == 4 else '?'}, 3, 3)",
            f"obtained: {w.shape} for input {x.shape}"
        )
    return DepthwiseConv3x3.apply(x, w)


def conv_patchify(x, weight, bias, kernel: int) -> Tensor:
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    if x.ndim != 4 or x.shape[2] % kernel or x.shape[3] % kernel:
        raise fail(
            LOGGER, ShapeError,
            "invalid patch size",
            f"expected: extents divisible by {kernel}",
            f"obtained: {x.shape}"
        )
    if weight.shape[1:] != (x.shape[1], kernel, kernel) or bias.shape != (weight.shape[0],):
        raise fail(
            LOGGER, ShapeError,
            "invalid patch kernel",
            f"expected: (out, {x.shape[1]}, {kernel}, {kernel})",
            f"obtained: {weight.shape}, bias {bias.shape}"
        )
    return ConvPatchify.apply(x, weight, bias, kernel=kernel)


def upsample_nearest(x, factor: int) -> Tensor:
    return UpsampleNearest.apply(x, factor=factor)


# --- permutations ----------------------------------------------------------------------------------------------------

def validate_permutation(perm: np.ndarray, size: int) -> np.ndarray:
    """
    Checks that every row of perm is a bijection over [0, size).
    :param perm: N or B x N integer indices
    :param size: the number of positions
    :return: perm as a 2-d int64 array
    """
    perm = np.atleast_2d(np.asarray(perm))
    if perm.shape[-1] != size or not np.issubdtype(perm.dtype, np.integer):
        raise fail(
            LOGGER, PermutationError,
            "invalid permutation",
            f"expected: {size} integer indices",
            f"obtained: {perm.shape[-1]} of {perm.dtype}"
        )
    if not np.array_equal(np.sort(perm, axis=-1), np.broadcast_to(np.arange(size), perm.shape)):
        raise fail(
            LOGGER, PermutationError,
            "invalid permutation",
            f"expected: a bijection over [0, {size})",
            "obtained: repeated or out of range indices"
        )
    return perm.astype(np.int64)


class PermuteGather(Function):
    @staticmethod
    def forward(ctx, x, perm=None):
        batch, channels, height, width = x.shape
        flat = x.reshape(batch, channels, height * width)
        ctx.save_for_backward(x.shape)
        return np.take_along_axis(flat, perm[:, None, :], axis=2).transpose(0, 2, 1)

    @staticmethod
    def backward(ctx, grad):
        shape, = ctx.saved
        return (_scatter(grad, ctx.kwargs["perm"], shape),)


class PermuteScatter(Function):
    @staticmethod
    def forward(ctx, seq, perm=None, shape=()):
        return _scatter(seq, perm, shape)

    @staticmethod
    def backward(ctx, grad):
        batch, channels, height, width = grad.shape
        flat = grad.reshape(batch, channels, height * width)
        return (np.take_along_axis(flat, ctx.kwargs["perm"][:, None, :], axis=2).transpose(0, 2, 1),)


def _scatter(seq: np.ndarray, perm: np.ndarray, shape: tuple) -> np.ndarray:
    batch, channels, height, width = shape
    flat = np.zeros((batch, channels, height * width))
    np.put_along_axis(flat, perm[:, None, :], seq.transpose(0, 2, 1), axis=2)
    return flat.reshape(shape)


def _batched_perm(perm, batch: int, size: int) -> np.ndarray:
    perm = validate_permutation(perm, size)
    if perm.shape[0] == 1 and batch > 1:
        perm = np.repeat(perm, batch, axis=0)
    if perm.shape[0] != batch:
        raise fail(
            LOGGER, ShapeError,
            "invalid permutation batch",
            f"expected: {batch}",
            f"obtained: {perm.shape[0]}"
        )
    return perm


def permute_gather(x, perm) -> Tensor:
    """
    Rearranges a map into a sequence: position k of the output holds the pixel perm[k].
    :param x: B x C x H x W map
    :param perm: N or B x N pixel indices (row-major), one bijection per sample
    :return: B x N x C sequence
    """
    x = as_tensor(x)
    if x.ndim != 4:
        raise fail(LOGGER, ShapeError, "invalid map rank", "expected: 4", f"obtained: {x.ndim}")
    batch, _, height, width = x.shape
    return PermuteGather.apply(x, perm=_batched_perm(perm, batch, height * width))


def permute_scatter(seq, perm, height: int, width: int) -> Tensor:
    """
    Restores a sequence produced with perm to its original spatial layout (the inverse of permute_gather).
    :param seq: B x N x C sequence
    :param perm: N or B x N pixel indices used to gather
    :param height: the map height
    :param width: the map width
    :return: B x C x H x W map
    """
    seq = as_tensor(seq)
    if seq.ndim != 3 or seq.shape[1] != height * width:
        raise fail(
            LOGGER, ShapeError,
            "invalid sequence shape",
            f"expected: (B, {height * width}, C)",
            f"obtained: {seq.shape}"
        )
    batch, _, channels = seq.shape
    perm = _batched_perm(perm, batch, height * width)
    return PermuteScatter.apply(seq, perm=perm, shape=(batch, channels, height, width))
