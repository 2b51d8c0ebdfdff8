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
Central finite-difference verification of analytic gradients.
"""
import dataclasses
import logging
from typing import Callable, Optional, Sequence

import numpy as np

from tulliolo.udmamba import ops
from tulliolo.udmamba.tensor import Tensor, as_tensor, backward, no_grad

LOGGER = logging.getLogger(__name__)

STEP = 1e-5
TOLERANCE = 1e-4
FLOOR = 1e-6


@dataclasses.dataclass
class GradcheckResult:
    max_rel_error: float
    checked: int
    worst: str = ""

    @property
    def passed(self) -> bool:
        return self.max_rel_error < TOLERANCE


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic) + abs(numeric), FLOOR)


def projection(shape, seed: int = 0) -> np.ndarray:
    return np.random.default_rng(seed).standard_normal(shape)


def scalarize(output: Tensor, weights: Optional[np.ndarray] = None) -> Tensor:
    """
    Reduces an output to the scalar sum(output * weights), weights being a fixed random projection by default.
    :param output: the output tensor
    :param weights: the projection
    :return:
    """
    if output.size == 1:
        return ops.sum(output)
    weights = projection(output.shape) if weights is None else weights
    return ops.sum(ops.mul(output, Tensor(weights)))


def gradcheck(
        fn: Callable[..., Tensor],
        inputs: Sequence[Tensor],
        step: float = STEP,
        samples: Optional[int] = None,
        seed: int = 0
) -> GradcheckResult:
    """
    Compares the backward gradients of fn with central differences.
    :param fn: builds a tensor from the inputs (non-scalar outputs are projected)
    :param inputs: the leaves; only those requiring gradients are checked
    :param step: the finite-difference step
    :param samples: the number of entries checked per input (all when omitted)
    :param seed: the entry sampling seed
    :return:
    """
    inputs = [as_tensor(t) for t in inputs]
    for tensor in inputs:
        # entries are perturbed in place through a flat view
        tensor.data = np.ascontiguousarray(tensor.data)
        tensor.zero_grad()

    output = fn(*inputs)
    weights = None if output.size == 1 else projection(output.shape, seed)
    backward(scalarize(output, weights))
    analytic = [None if t.grad is None else t.grad.copy() for t in inputs]

    def evaluate() -> float:
        with no_grad():
            return float(scalarize(fn(*inputs), weights).data)

    rng = np.random.default_rng(seed)
    worst, worst_name, checked = 0.0, "", 0
    for i, tensor in enumerate(inputs):
        if not tensor.requires_grad:
            continue
        grad = analytic[i] if analytic[i] is not None else np.zeros_like(tensor.data)
        flat = tensor.data.reshape(-1)
        entries = np.arange(flat.size)
        if samples is not None and samples < flat.size:
            entries = rng.choice(flat.size, size=samples, replace=False)
        for j in entries:
            original = flat[j]
            flat[j] = original + step
            plus = evaluate()
            flat[j] = original - step
            minus = evaluate()
            flat[j] = original
            numeric = (plus - minus) / (2 * step)
            error = relative_error(float(grad.reshape(-1)[j]), numeric)
            checked += 1
            if error > worst:
                worst, worst_name = error, f"{tensor.name or i}[{int(j)}]"

    LOGGER.debug(f"gradcheck: {checked} entries, max relative error {worst:.3e} at {worst_name}")
    return GradcheckResult(worst, checked, worst_name)
