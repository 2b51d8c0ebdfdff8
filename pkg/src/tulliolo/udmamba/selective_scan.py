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
The selective state-space (S6) block: input-dependent parameters, zero-order-hold discretization and the linear
recurrence h_t = abar_t * h_{t-1} + bbar_t * x_t, y_t = C_t . h_t + D * x_t.

The recurrence is evaluated either step by step or with a work-efficient (up-sweep/down-sweep) associative scan;
both paths also serve the backward pass, whose adjoint is the same recurrence run in reverse.
"""
from __future__ import annotations

import dataclasses
import enum
import logging
import math
import time
from typing import List, Optional, Tuple

import numpy as np

from tulliolo.udmamba import ops
from tulliolo.udmamba.errors import ConfigError, ShapeError, fail
from tulliolo.udmamba.tensor import Function, Tensor, as_tensor

LOGGER = logging.getLogger(__name__)

SERIES_THRESHOLD = 1e-6
STATE_SIZE_DEF = 8
DELTA_MIN = 0.001
DELTA_MAX = 0.1


class ScanMethod(enum.Enum):
    """
    The evaluation strategy of the linear recurrence:

    - parallel (DEFAULT): associative up-sweep/down-sweep scan, log(L) vectorized levels;
    - sequential: the reference step-by-step loop.
    """
    PARALLEL = DEFAULT = "parallel"
    SEQUENTIAL = "sequential"

    @property
    def description(self) -> str:
        return (
            "associative up-sweep/down-sweep scan" if self == ScanMethod.PARALLEL else
            "step-by-step reference recurrence"
        )

    def __call__(self, abar: np.ndarray, bx: np.ndarray) -> np.ndarray:
        """
        Evaluates h_t = abar_t * h_{t-1} + bx_t along axis 1, with h_{-1} = 0.
        :param abar: the decay coefficients, B x L x ...
        :param bx: the inputs, same shape as abar
        :return: the states, same shape as abar
        """
        return _sequential_scan(abar, bx) if self == ScanMethod.SEQUENTIAL else _parallel_scan(abar, bx)


@dataclasses.dataclass
class ScanStep:
    """
    One element of the associative scan: the affine map h -> abar * h + bbar_x.
    """
    abar: np.ndarray
    bbar_x: np.ndarray

    def __call__(self, h: np.ndarray) -> np.ndarray:
        return self.abar * h + self.bbar_x


def combine(first: ScanStep, second: ScanStep) -> ScanStep:
    """
    Composes two steps, first applied before second: (a1, b1) o (a2, b2) = (a1 a2, a2 b1 + b2).
    :param first: the earlier step
    :param second: the later step
    :return:
    """
    return ScanStep(first.abar * second.abar, second.abar * first.bbar_x + second.bbar_x)


def _sequential_scan(abar: np.ndarray, bx: np.ndarray) -> np.ndarray:
    h = np.empty_like(bx)
    state = np.zeros_like(bx[:, 0])
    for t in range(bx.shape[1]):
        state = abar[:, t] * state + bx[:, t]
        h[:, t] = state
    return h


def _parallel_scan(abar: np.ndarray, bx: np.ndarray) -> np.ndarray:
    length = bx.shape[1]
    size = 1 << max(length - 1, 0).bit_length()

    # identity steps pad the sequence to a power of two
    sa = np.ones((bx.shape[0], size) + bx.shape[2:])
    sb = np.zeros_like(sa)
    sa[:, :length] = abar
    sb[:, :length] = bx

    step = 2
    while step <= size:
        right = np.arange(step - 1, size, step)
        left = right - step // 2
        a_left, b_left = sa[:, left], sb[:, left]
        a_right, b_right = sa[:, right], sb[:, right]
        sa[:, right] = a_left * a_right
        sb[:, right] = a_right * b_left + b_right
        step *= 2

    sa[:, size - 1] = 1.0
    sb[:, size - 1] = 0.0
    step = size
    while step >= 2:
        right = np.arange(step - 1, size, step)
        left = right - step // 2
        a_left, b_left = sa[:, left], sb[:, left]
        a_prefix, b_prefix = sa[:, right], sb[:, right]
        sa[:, left] = a_prefix
        sb[:, left] = b_prefix
        sa[:, right] = a_prefix * a_left
        sb[:, right] = a_left * b_prefix + b_left
        step //= 2

    # sb now holds the exclusive prefix state; apply each element on top of it
    return abar * sb[:, :length] + bx


def linear_recurrence(abar: np.ndarray, bx: np.ndarray, method: ScanMethod = ScanMethod.DEFAULT) -> np.ndarray:
    """
    Evaluates h_t = abar_t * h_{t-1} + bx_t along axis 1 (h_{-1} = 0).
    :param abar: B x L x ... coefficients
    :param bx: B x L x ... inputs
    :param method: the scan method
    :return: B x L x ... states
    """
    if abar.shape != bx.shape or abar.ndim < 2:
        raise fail(
            LOGGER, ShapeError,
            "invalid scan operands",
            "expected: equal shapes of rank >= 2",
            f"obtained: {abar.shape}, {bx.shape}"
        )
    return ScanMethod(method)(abar, bx)


def discretize(delta: float, a: float, b: float) -> Tuple[float, float]:
    """
    Zero-order hold: abar = exp(delta * a), bbar = (exp(delta * a) - 1) / a * b, switching to the series
    delta * b * (1 + delta * a / 2) when |delta * a| < 1e-6.
    :param delta: the step, >= 0
    :param a: the (negative) state coefficient
    :param b: the input coefficient
    :return: (abar, bbar)
    """
    if delta < 0:
        raise fail(LOGGER, ConfigError, "invalid delta", "expected: >= 0", f"obtained: {delta}")
    abar, factor = _zoh(np.asarray(delta, dtype=np.float64), np.asarray(a, dtype=np.float64))
    return float(abar), float(factor * b)


def _zoh(delta: np.ndarray, a: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    da = delta * a
    series = np.abs(da) < SERIES_THRESHOLD
    safe_a = np.where(series, 1.0, a)
    factor = np.where(series, delta * (1.0 + da / 2.0), np.expm1(da) / safe_a)
    return np.exp(da), factor


def _zoh_partials(delta: np.ndarray, a: np.ndarray, abar: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    da = delta * a
    series = np.abs(da) < SERIES_THRESHOLD
    safe_a = np.where(series, 1.0, a)
    d_delta = np.where(series, 1.0 + da, abar)
    d_a = np.where(series, delta * delta / 2.0, (da * abar - np.expm1(da)) / (safe_a * safe_a))
    return d_delta, d_a


class SelectiveScan(Function):
    """
    The fused S6 recurrence over B x L x C inputs with N state dimensions per channel.
    """
    @staticmethod
    def forward(ctx, x, delta, a, bm, cm, d=None, method=ScanMethod.DEFAULT):
        delta4 = delta[..., None]
        abar, factor = _zoh(delta4, a)
        bx = factor * bm[:, :, None, :] * x[..., None]
        h = linear_recurrence(abar, bx, method)
        y = np.einsum("blcn,bln->blc", h, cm)
        if d is not None:
            y = y + d * x
        ctx.save_for_backward(x, delta4, a, bm, cm, d, abar, factor, h)
        return y

    @staticmethod
    def backward(ctx, grad):
        x, delta4, a, bm, cm, d, abar, factor, h = ctx.saved
        method = ctx.kwargs.get("method", ScanMethod.DEFAULT)

        gx = grad * d if d is not None else np.zeros_like(x)
        gd = np.sum(grad * x, axis=(0, 1)) if d is not None else None
        gcm = np.einsum("blc,blcn->bln", grad, h)

        # adjoint: g_t = grad_t C_t + abar_{t+1} g_{t+1}
        direct = grad[..., None] * cm[:, :, None, :]
        shifted = np.concatenate([abar[:, 1:], np.ones_like(abar[:, :1])], axis=1)
        g = linear_recurrence(shifted[:, ::-1], direct[:, ::-1], method)[:, ::-1]

        h_prev = np.concatenate([np.zeros_like(h[:, :1]), h[:, :-1]], axis=1)
        gabar = g * h_prev
        gfactor = g * bm[:, :, None, :] * x[..., None]
        gbm = np.einsum("blcn,blcn,blc->bln", g, factor, x)
        gx = gx + np.einsum("blcn,blcn,bln->blc", g, factor, bm)

        d_delta, d_a = _zoh_partials(delta4, a, abar)
        gdelta = np.sum(gabar * abar * a + gfactor * d_delta, axis=-1)
        ga = np.sum(gabar * abar * delta4 + gfactor * d_a, axis=(0, 1))

        grads = [gx, gdelta, ga, gbm, gcm]
        if d is not None:
            grads.append(gd)
        return tuple(grads)


def selective_scan(x, delta, a, bm, cm, d=None, method: ScanMethod = ScanMethod.DEFAULT) -> Tensor:
    """
    Runs the S6 recurrence.
    :param x: B x L x C inputs
    :param delta: B x L x C steps (> 0)
    :param a: C x N state coefficients (< 0)
    :param bm: B x L x N input projections
    :param cm: B x L x N output projections
    :param d: optional C direct passthrough
    :param method: the scan method
    :return: B x L x C outputs
    """
    x, delta, a, bm, cm = (as_tensor(v) for v in (x, delta, a, bm, cm))
    batch, length, channels = x.shape
    state = a.shape[-1]
    expected = {
        "delta": (delta.shape, (batch, length, channels)),
        "a": (a.shape, (channels, state)),
        "b": (bm.shape, (batch, length, state)),
        "c": (cm.shape, (batch, length, state)),
    }
    if d is not None:
        expected["d"] = (as_tensor(d).shape, (channels,))
    for key, (obtained, shape) in expected.items():
        if obtained != shape:
            raise fail(
                LOGGER, ShapeError,
                "invalid scan shape",
                f"expected: {key} {shape}",
                f"obtained: {key} {obtained}"
            )
    method = ScanMethod(method)
    if d is None:
        return SelectiveScan.apply(x, delta, a, bm, cm, method=method)
    return SelectiveScan.apply(x, delta, a, bm, cm, d, method=method)


class S6Params:
    """
    The trainable parameters of one S6 block over C channels:

    - dt_down (R x C), dt_up (C x R), dt_bias (C): delta = softplus(dt_up . dt_down . x + dt_bias);
    - w_b, w_c (N x C): the input dependent B_t and C_t;
    - a_log (C x N): A = -exp(a_log), initialized A[c, n] = -(n + 1);
    - d (C): the direct passthrough, used when use_d is set.
    """
    def __init__(
            self,
            channels: int,
            state_size: int = STATE_SIZE_DEF,
            dt_rank: Optional[int] = None,
            use_d: bool = True,
            rng: Optional[np.random.Generator] = None,
            prefix: str = "s6"
    ):
        if channels < 1 or state_size < 1:
            raise fail(
                LOGGER, ConfigError,
                "invalid s6 size",
                "expected: channels >= 1, state_size >= 1",
                f"obtained: {channels}, {state_size}"
            )
        rng = rng if rng is not None else np.random.default_rng(0)
        self.channels = channels
        self.state_size = state_size
        self.dt_rank = dt_rank or max(1, channels // 16)
        self.use_d = use_d

        def uniform(shape, fan_in):
            bound = 1.0 / math.sqrt(fan_in)
            return rng.uniform(-bound, bound, size=shape)

        dt = np.exp(rng.uniform(math.log(DELTA_MIN), math.log(DELTA_MAX), size=channels))
        self.dt_down = Tensor(uniform((self.dt_rank, channels), channels), True, name=f"{prefix}.dt_down")
        self.dt_up = Tensor(uniform((channels, self.dt_rank), self.dt_rank) * 0.1, True, name=f"{prefix}.dt_up")
        # inverse softplus, so that the initial delta lies in [DELTA_MIN, DELTA_MAX]
        self.dt_bias = Tensor(dt + np.log(-np.expm1(-dt)), True, name=f"{prefix}.dt_bias")
        self.w_b = Tensor(uniform((state_size, channels), channels), True, name=f"{prefix}.w_b")
        self.w_c = Tensor(uniform((state_size, channels), channels), True, name=f"{prefix}.w_c")
        self.a_log = Tensor(
            np.log(np.tile(np.arange(1, state_size + 1, dtype=np.float64), (channels, 1))), True,
            name=f"{prefix}.a_log"
        )
        self.d = Tensor(np.ones(channels), True, name=f"{prefix}.d") if use_d else None

    def parameters(self) -> List[Tensor]:
        params = [self.dt_down, self.dt_up, self.dt_bias, self.w_b, self.w_c, self.a_log]
        return params + [self.d] if self.d is not None else params

    @property
    def a(self) -> np.ndarray:
        return -np.exp(self.a_log.data)

    def __call__(self, x_seq, method: ScanMethod = ScanMethod.DEFAULT) -> Tensor:
        return s6_forward(x_seq, self, method)


def s6_forward(x_seq, params: S6Params, method: ScanMethod = ScanMethod.DEFAULT) -> Tensor:
    """
    Runs an S6 block on a sequence.
    :param x_seq: L x C or B x L x C sequence
    :param params: the block parameters
    :param method: the scan method
    :return: the output sequence, same shape as x_seq
    """
    x_seq = as_tensor(x_seq)
    if x_seq.ndim == 2:
        return ops.reshape(s6_forward(ops.reshape(x_seq, (1,) + x_seq.shape), params, method), x_seq.shape)
    if x_seq.ndim != 3 or x_seq.shape[-1] != params.channels:
        raise fail(
            LOGGER, ShapeError,
            "invalid sequence shape",
            f"expected: (B, L, {params.channels})",
            f"obtained: {x_seq.shape}"
        )

    delta = ops.softplus(ops.linear(ops.linear(x_seq, params.dt_down), params.dt_up, params.dt_bias))
    bm = ops.linear(x_seq, params.w_b)
    cm = ops.linear(x_seq, params.w_c)
    a = ops.neg(ops.exp(params.a_log))
    return selective_scan(x_seq, delta, a, bm, cm, params.d, method)


def s6_sequential(x_seq, params: S6Params) -> Tensor:
    return s6_forward(x_seq, params, ScanMethod.SEQUENTIAL)


def s6_parallel(x_seq, params: S6Params) -> Tensor:
    return s6_forward(x_seq, params, ScanMethod.PARALLEL)


def bench_scan(
        lengths: List[int],
        channels: int = 16,
        state_size: int = STATE_SIZE_DEF,
        repeats: int = 3,
        seed: int = 0
) -> List[Tuple[int, int, int]]:
    """
    Times both scan methods on random stable steps.
    :param lengths: the sequence lengths
    :param channels: the channel count
    :param state_size: the state size
    :param repeats: timings per method, the best is kept
    :param seed: the random seed
    :return: rows of (L, sequential_ns, parallel_ns)
    """
    rng = np.random.default_rng(seed)
    rows = []
    for length in lengths:
        abar = rng.uniform(0.5, 1.0, size=(1, length, channels, state_size))
        bx = rng.uniform(-1.0, 1.0, size=abar.shape)
        timings = []
        for method in (ScanMethod.SEQUENTIAL, ScanMethod.PARALLEL):
            best = None
            for _ in range(repeats):
                start = time.perf_counter_ns()
                method(abar, bx)
                elapsed = time.perf_counter_ns() - start
                best = elapsed if best is None else min(best, elapsed)
            timings.append(best)
        LOGGER.debug(f"L={length} sequential={timings[0]}ns parallel={timings[1]}ns")
        rows.append((length, timings[0], timings[1]))
    return rows
