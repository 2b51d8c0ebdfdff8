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
A dense 64-bit tensor with reverse-mode differentiation.

Operations are `Function` subclasses: `forward` works on numpy arrays, `backward` maps the output gradient to one
gradient per parent. Executing a function on tensors that require gradients records it in the output `_ctx`;
`Graph.from_output` rebuilds the topological order and `backward` walks it in reverse.
"""
from __future__ import annotations

import contextlib
import logging
import threading
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np

from tulliolo.udmamba.errors import ContractError, NumericError, ShapeError, fail

LOGGER = logging.getLogger(__name__)

MAX_RANK = 4

# graph recording is switched per thread, evaluation workers run under no_grad
_GRAD_STATE = threading.local()


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """
    Disables graph recording inside the block (evaluation, optimizer updates).
    :return:
    """
    previous = is_grad_enabled()
    _GRAD_STATE.enabled = False
    try:
        yield
    finally:
        _GRAD_STATE.enabled = previous


def is_grad_enabled() -> bool:
    return getattr(_GRAD_STATE, "enabled", True)


class Tensor:
    """
    A dense row-major float64 array with an optional gradient accumulator.
    """
    def __init__(self, data, requires_grad: bool = False, _ctx: Optional[Function] = None, name: str = ""):
        data = np.asarray(data, dtype=np.float64)
        if data.ndim > MAX_RANK:
            raise fail(
                LOGGER, ShapeError,
                "invalid rank",
                f"expected: <= {MAX_RANK}",
                f"obtained: {data.ndim}"
            )
        self.data = data
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._ctx = _ctx

    def __repr__(self) -> str:
        label = f"{self.name}, " if self.name else ""
        return f"Tensor({label}shape={self.shape}, requires_grad={self.requires_grad})"

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise fail(
                LOGGER, ContractError,
                "not a scalar",
                "expected: 1 element",
                f"obtained: {self.data.size} elements"
            )
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> Tensor:
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = None

    def backward(self) -> List[Tensor]:
        """
        Back-propagates from this (scalar) tensor.
        :return: the leaf tensors whose gradient was updated
        """
        return backward(self)

    # operators, resolved lazily to keep ops out of the import cycle
    def __add__(self, other):
        from tulliolo.udmamba import ops
        return ops.add(self, other)

    def __radd__(self, other):
        from tulliolo.udmamba import ops
        return ops.add(other, self)

    def __sub__(self, other):
        from tulliolo.udmamba import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from tulliolo.udmamba import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from tulliolo.udmamba import ops
        return ops.mul(self, other)

    def __rmul__(self, other):
        from tulliolo.udmamba import ops
        return ops.mul(other, self)

    def __truediv__(self, other):
        from tulliolo.udmamba import ops
        return ops.div(self, other)

    def __rtruediv__(self, other):
        from tulliolo.udmamba import ops
        return ops.div(other, self)

    def __neg__(self):
        from tulliolo.udmamba import ops
        return ops.neg(self)

    def __matmul__(self, other):
        from tulliolo.udmamba import ops
        return ops.matmul(self, other)

    def sum(self, axis=None, keepdims: bool = False) -> Tensor:
        from tulliolo.udmamba import ops
        return ops.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> Tensor:
        from tulliolo.udmamba import ops
        return ops.mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape) -> Tensor:
        from tulliolo.udmamba import ops
        return ops.reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], (tuple, list)) else shape)

    def transpose(self, *axes) -> Tensor:
        from tulliolo.udmamba import ops
        return ops.transpose(self, axes[0] if len(axes) == 1 and isinstance(axes[0], (tuple, list)) else axes)


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


class Function:
    """
    The base class of differentiable operations.

    Subclasses implement `forward(ctx, *arrays, **kwargs)` returning an array and
    `backward(ctx, grad)` returning one gradient (or None) per parent.
    """
    def __init__(self):
        self.parents: Tuple[Tensor, ...] = ()
        self.saved: tuple = ()
        self.kwargs: dict = {}

    def save_for_backward(self, *values):
        self.saved = values

    @classmethod
    def apply(cls, *args, **kwargs) -> Tensor:
        ctx = cls()
        ctx.parents = tuple(as_tensor(arg) for arg in args)
        ctx.kwargs = kwargs
        output = np.asarray(ctx.forward(ctx, *[p.data for p in ctx.parents], **kwargs), dtype=np.float64)

        if not np.all(np.isfinite(output)):
            raise fail(
                LOGGER, NumericError,
                "non-finite value",
                f"operation: {cls.__name__}",
                f"obtained: {int(np.count_nonzero(~np.isfinite(output)))} non-finite of {output.size}"
            )

        requires_grad = is_grad_enabled() and any(p.requires_grad for p in ctx.parents)
        return Tensor(output, requires_grad=requires_grad, _ctx=ctx if requires_grad else None)

    @staticmethod
    def forward(ctx, *args, **kwargs) -> np.ndarray:
        raise NotImplementedError

    @staticmethod
    def backward(ctx, grad: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        raise NotImplementedError


class Graph:
    """
    The topologically ordered record of the operations that produced a tensor.
    """
    def __init__(self, nodes: List[Tensor]):
        self.nodes = nodes

    def __len__(self) -> int:
        return len(self.nodes)

    @classmethod
    def from_output(cls, output: Tensor) -> Graph:
        """
        Collects every tensor reachable from output, parents before children.
        :param output: the last tensor of the computation
        :return:
        """
        order: List[Tensor] = []
        visited = set()
        stack: List[Tuple[Tensor, bool]] = [(output, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            if node._ctx is not None:
                for parent in reversed(node._ctx.parents):
                    if parent.requires_grad and id(parent) not in visited:
                        stack.append((parent, False))
        return cls(order)

    @property
    def leaves(self) -> List[Tensor]:
        return [node for node in self.nodes if node._ctx is None]


def backward(loss: Tensor, graph: Optional[Graph] = None) -> List[Tensor]:
    """
    Accumulates d(loss)/d(leaf) into the `grad` of every leaf requiring gradients.
    :param loss: a scalar tensor
    :param graph: the recorded graph (rebuilt from loss when omitted)
    :return: the leaves reached
    """
    if loss.size != 1:
        raise fail(
            LOGGER, ContractError,
            "non-scalar loss",
            "expected: 1 element",
            f"obtained: shape {loss.shape}"
        )
    if not loss.requires_grad:
        return []

    graph = graph or Graph.from_output(loss)
    grads = {id(loss): np.ones_like(loss.data)}

    for node in reversed(graph.nodes):
        grad = grads.pop(id(node), None)
        if grad is None:
            continue
        if node._ctx is None:
            node.grad = grad.copy() if node.grad is None else node.grad + grad
            continue

        parent_grads = node._ctx.backward(node._ctx, grad)
        for parent, parent_grad in zip(node._ctx.parents, parent_grads):
            if parent_grad is None or not parent.requires_grad:
                continue
            if parent_grad.shape != parent.shape:
                raise fail(
                    LOGGER, ShapeError,
                    "invalid gradient shape",
                    f"operation: {type(node._ctx).__name__}",
                    f"expected: {parent.shape}",
                    f"obtained: {parent_grad.shape}"
                )
            key = id(parent)
            grads[key] = parent_grad if key not in grads else grads[key] + parent_grad

    return graph.leaves
