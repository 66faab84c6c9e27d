"""Dense 2-D matrices with reverse-mode automatic differentiation.

Values are float64 numpy arrays of shape (rows, cols). Every operation
returns a new :class:`Node` whose ``parents`` list carries ``(node, pull)``
pairs; ``pull`` maps the output gradient to that parent's gradient
contribution. ``backward`` walks the graph once in reverse topological
order and accumulates gradients into every node that requires them.

Broadcasting is deliberately restricted: the second operand of an
elementwise op may be a 1 x n bias row matched against an m x n left
operand, nothing else. All other mismatches raise :class:`ShapeError`.
Any op whose result contains NaN/Inf raises :class:`NumericError`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateBatchError, NumericError, ShapeError, StateError

ELU_ALPHA = 1.0
BCE_CLIP = 1e-12

ELEMENTWISE_KINDS = ("add", "sub", "hadamard")
ACTIVATION_KINDS = ("sigmoid", "tanh", "relu", "elu")


def as_matrix(x) -> np.ndarray:
    """Coerce array-like input to a float64 matrix; 1-D input becomes a row."""
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    elif a.ndim == 1:
        a = a.reshape(1, -1)
    elif a.ndim != 2:
        raise ShapeError(f"expected at most 2-D data, got shape {a.shape}")
    return a


class Node:
    """A matrix value in the compute graph with an accumulated gradient."""

    __slots__ = ("value", "grad", "parents", "requires_grad", "_backward_done")

    def __init__(self, value, requires_grad: bool = False, parents=None, op: str = "leaf"):
        v = as_matrix(value)
        if not np.isfinite(v).all():
            raise NumericError(f"non-finite values produced by '{op}'")
        self.value = v
        self.grad = np.zeros_like(v)
        self.parents = [] if parents is None else parents
        self.requires_grad = requires_grad
        self._backward_done = False

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad[...] = 0.0

    def __repr__(self) -> str:
        r, c = self.shape
        return f"Node({r}x{c}, requires_grad={self.requires_grad})"


def constant(x) -> Node:
    return Node(x, requires_grad=False)


def parameter(x) -> Node:
    return Node(x, requires_grad=True)


def _result(value, pulls, op: str) -> Node:
    """Build an op output; only grad-requiring parents stay in the graph."""
    parents = [(p, fn) for p, fn in pulls if p.requires_grad]
    return Node(value, requires_grad=bool(parents), parents=parents, op=op)


def matmul(a: Node, b: Node) -> Node:
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} x {b.shape}")
    av, bv = a.value, b.value
    return _result(
        av @ bv,
        [(a, lambda g: g @ bv.T), (b, lambda g: av.T @ g)],
        "matmul",
    )


def _broadcast_kind(a: Node, b: Node, op: str) -> bool:
    """True when b is a 1 x n bias row to stretch over a's rows."""
    if a.shape == b.shape:
        return False
    if b.shape == (1, a.shape[1]) and a.shape[0] >= 1:
        return True
    raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} are not compatible")


def elementwise(a: Node, b: Node, kind: str) -> Node:
    if kind not in ELEMENTWISE_KINDS:
        raise ValueError(f"unknown elementwise kind '{kind}'")
    broadcast = _broadcast_kind(a, b, kind)
    av, bv = a.value, b.value

    def reduce_b(g):
        return g.sum(axis=0, keepdims=True) if broadcast else g

    if kind == "add":
        value = av + bv
        pulls = [(a, lambda g: g), (b, lambda g: reduce_b(g))]
    elif kind == "sub":
        value = av - bv
        pulls = [(a, lambda g: g), (b, lambda g: -reduce_b(g))]
    else:  # hadamard
        value = av * bv
        pulls = [(a, lambda g: g * bv), (b, lambda g: reduce_b(g * av))]
    return _result(value, pulls, kind)


def add(a: Node, b: Node) -> Node:
    return elementwise(a, b, "add")


def sub(a: Node, b: Node) -> Node:
    return elementwise(a, b, "sub")


def hadamard(a: Node, b: Node) -> Node:
    return elementwise(a, b, "hadamard")


def activation(a: Node, kind: str) -> Node:
    if kind not in ACTIVATION_KINDS:
        raise ValueError(f"unknown activation kind '{kind}'")
    x = a.value
    if kind == "sigmoid":
        y = np.empty_like(x)
        pos = x >= 0.0
        y[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        y[~pos] = ex / (1.0 + ex)
        local = y * (1.0 - y)
    elif kind == "tanh":
        y = np.tanh(x)
        local = 1.0 - y * y
    elif kind == "relu":
        y = np.maximum(x, 0.0)
        local = (x > 0.0).astype(np.float64)
    else:  # elu
        neg = ELU_ALPHA * np.expm1(np.minimum(x, 0.0))
        y = np.where(x >= 0.0, x, neg)
        local = np.where(x >= 0.0, 1.0, neg + ELU_ALPHA)
    return _result(y, [(a, lambda g: g * local)], kind)


def sigmoid(a: Node) -> Node:
    return activation(a, "sigmoid")


def tanh(a: Node) -> Node:
    return activation(a, "tanh")


def relu(a: Node) -> Node:
    return activation(a, "relu")


def elu(a: Node) -> Node:
    return activation(a, "elu")


def concat_cols(parts: list[Node]) -> Node:
    if not parts:
        raise ShapeError("concat_cols needs at least one part")
    rows = parts[0].shape[0]
    for p in parts[1:]:
        if p.shape[0] != rows:
            raise ShapeError(
                f"concat_cols row mismatch: {parts[0].shape} vs {p.shape}"
            )
    value = np.concatenate([p.value for p in parts], axis=1)
    pulls = []
    offset = 0
    for p in parts:
        lo, hi = offset, offset + p.shape[1]
        pulls.append((p, lambda g, lo=lo, hi=hi: g[:, lo:hi]))
        offset = hi
    return _result(value, pulls, "concat_cols")


def concat_rows(parts: list[Node]) -> Node:
    if not parts:
        raise ShapeError("concat_rows needs at least one part")
    cols = parts[0].shape[1]
    for p in parts[1:]:
        if p.shape[1] != cols:
            raise ShapeError(
                f"concat_rows column mismatch: {parts[0].shape} vs {p.shape}"
            )
    value = np.concatenate([p.value for p in parts], axis=0)
    pulls = []
    offset = 0
    for p in parts:
        lo, hi = offset, offset + p.shape[0]
        pulls.append((p, lambda g, lo=lo, hi=hi: g[lo:hi, :]))
        offset = hi
    return _result(value, pulls, "concat_rows")


def sum_all(a: Node) -> Node:
    rows, cols = a.shape
    return _result(
        np.array([[a.value.sum()]]),
        [(a, lambda g: np.full((rows, cols), g[0, 0]))],
        "sum_all",
    )


def scale(a: Node, c: float) -> Node:
    c = float(c)
    return _result(c * a.value, [(a, lambda g: c * g)], "scale")


def bce(p: Node, targets) -> Node:
    """Elementwise binary cross-entropy against constant 0/1 targets.

    Probabilities are clipped to [BCE_CLIP, 1 - BCE_CLIP] before the logs so
    saturated sigmoids cannot produce infinities; the gradient is zero in the
    clipped region.
    """
    y = as_matrix(targets)
    if y.shape != p.shape:
        raise ShapeError(f"bce: probabilities {p.shape} vs targets {y.shape}")
    pc = np.clip(p.value, BCE_CLIP, 1.0 - BCE_CLIP)
    value = -(y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc))
    inside = (p.value > BCE_CLIP) & (p.value < 1.0 - BCE_CLIP)
    local = np.where(inside, (pc - y) / (pc * (1.0 - pc)), 0.0)
    return _result(value, [(p, lambda g: g * local)], "bce")


@dataclass
class BatchNormState:
    """Running statistics plus the trainable scale/shift of one norm layer.

    Train mode normalizes with the current batch's per-column mean and biased
    variance and folds them into the running statistics
    (``running = (1 - momentum) * running + momentum * batch``); infer mode
    uses the running statistics only.
    """

    gamma: Node
    beta: Node
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    epsilon: float = 1e-5

    def __post_init__(self):
        if not 0.0 < self.momentum < 1.0:
            raise ValueError(f"momentum must lie in (0, 1), got {self.momentum}")
        if self.epsilon <= 0.0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if (self.running_var < 0.0).any():
            raise ValueError("running_var entries must be non-negative")

    @classmethod
    def create(cls, width: int, momentum: float = 0.1, epsilon: float = 1e-5) -> "BatchNormState":
        return cls(
            gamma=parameter(np.ones((1, width))),
            beta=parameter(np.zeros((1, width))),
            running_mean=np.zeros(width),
            running_var=np.ones(width),
            momentum=momentum,
            epsilon=epsilon,
        )


def batchnorm(a: Node, state: BatchNormState, mode: str) -> Node:
    if mode not in ("train", "infer"):
        raise ValueError(f"unknown batchnorm mode '{mode}'")
    if a.shape[1] != state.gamma.shape[1]:
        raise ShapeError(
            f"batchnorm width mismatch: input {a.shape}, state {state.gamma.shape}"
        )
    x = a.value
    m = x.shape[0]
    gval = state.gamma.value

    if mode == "train":
        if m < 2:
            raise DegenerateBatchError(
                f"batchnorm train mode needs a batch of >= 2 rows, got {m}"
            )
        mu = x.mean(axis=0)
        var = x.var(axis=0)
        inv = 1.0 / np.sqrt(var + state.epsilon)
        xhat = (x - mu) * inv
        state.running_mean = (1.0 - state.momentum) * state.running_mean + state.momentum * mu
        state.running_var = (1.0 - state.momentum) * state.running_var + state.momentum * var

        def pull_a(g):
            dxhat = g * gval
            return inv * (
                dxhat - dxhat.mean(axis=0) - xhat * (dxhat * xhat).mean(axis=0)
            )

    else:
        inv = 1.0 / np.sqrt(state.running_var + state.epsilon)
        xhat = (x - state.running_mean) * inv

        def pull_a(g):
            return g * gval * inv

    value = gval * xhat + state.beta.value
    pulls = [
        (a, pull_a),
        (state.gamma, lambda g: (g * xhat).sum(axis=0, keepdims=True)),
        (state.beta, lambda g: g.sum(axis=0, keepdims=True)),
    ]
    return _result(value, pulls, "batchnorm")


def _topo_order(root: Node) -> list[Node]:
    order: list[Node] = []
    seen: set[int] = set()
    stack: list[tuple[Node, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent, _ in node.parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Node) -> None:
    """Populate grads of every reachable requires_grad node with dLoss/dNode."""
    if loss.shape != (1, 1):
        raise ShapeError(f"backward needs a 1x1 loss, got {loss.shape}")
    if loss._backward_done:
        raise StateError("backward already ran on this graph; rebuild it first")
    loss._backward_done = True
    loss.grad = np.ones((1, 1))
    for node in reversed(_topo_order(loss)):
        g = node.grad
        for parent, pull in node.parents:
            parent.grad += pull(g)
