"""Minimal reverse-mode automatic differentiation on a flat tape.

Values are dense float64 numpy arrays. Every operation appends a node to
a Tape; parents always precede children, so a single reverse sweep over
the node list propagates gradients. Tapes are cheap and rebuilt for every
forward pass.
"""

from __future__ import annotations

from typing import Callable, Optional

import numpy as np

# Running count of backward() invocations, used for training-cost accounting.
_backward_calls = 0


def backward_calls() -> int:
    return _backward_calls


class Node:
    """Handle to one tape entry."""

    __slots__ = ("tape", "index")

    def __init__(self, tape: "Tape", index: int):
        self.tape = tape
        self.index = index

    @property
    def value(self) -> np.ndarray:
        return self.tape._values[self.index]

    @property
    def shape(self) -> tuple:
        return self.tape._values[self.index].shape

    @property
    def grad(self) -> np.ndarray:
        """Gradient of the last backward() root w.r.t. this node.

        Nodes the root does not depend on get an all-zero gradient.
        """
        grads = self.tape._grads
        if grads is None:
            raise RuntimeError("backward() has not been run on this tape")
        g = grads[self.index]
        if g is None:
            return np.zeros_like(self.value)
        return g

    def __repr__(self) -> str:
        return f"Node(index={self.index}, shape={self.shape})"


class Tape:
    """Append-only record of one forward computation."""

    def __init__(self):
        self._values: list[np.ndarray] = []
        self._parents: list[tuple[int, ...]] = []
        self._vjps: list[Optional[Callable]] = []
        self._grads: Optional[list] = None

    def __len__(self) -> int:
        return len(self._values)

    def leaf(self, value) -> Node:
        """Record an input (or constant) array. The array is copied."""
        arr = np.array(value, dtype=np.float64)
        return self._record(arr, (), None)

    def _record(self, value: np.ndarray, parents: tuple, vjp) -> Node:
        self._values.append(value)
        self._parents.append(parents)
        self._vjps.append(vjp)
        self._grads = None  # new nodes invalidate a previous sweep
        return Node(self, len(self._values) - 1)


def _same_tape(*nodes: Node) -> Tape:
    tape = nodes[0].tape
    for n in nodes[1:]:
        if n.tape is not tape:
            raise ValueError("operands live on different tapes")
    return tape


def matmul(a: Node, b: Node) -> Node:
    """Matrix product of a 2-D (m,k) node with a 2-D (k,n) node."""
    tape = _same_tape(a, b)
    av, bv = a.value, b.value
    if av.ndim != 2 or bv.ndim != 2 or av.shape[1] != bv.shape[0]:
        raise ValueError(f"matmul: incompatible shapes {av.shape} @ {bv.shape}")

    def vjp(g):
        return (g @ bv.T, av.T @ g)

    return tape._record(av @ bv, (a.index, b.index), vjp)


def add(a: Node, b: Node) -> Node:
    """Elementwise sum; also accepts (B,n)+(n,) to add a bias row-wise."""
    tape = _same_tape(a, b)
    av, bv = a.value, b.value
    if av.shape == bv.shape:
        vjp = lambda g: (g, g)
    elif av.ndim == 2 and bv.ndim == 1 and av.shape[1] == bv.shape[0]:
        vjp = lambda g: (g, g.sum(axis=0))
    else:
        raise ValueError(f"add: incompatible shapes {av.shape} + {bv.shape}")
    return tape._record(av + bv, (a.index, b.index), vjp)


def sub(a: Node, b: Node) -> Node:
    tape = _same_tape(a, b)
    av, bv = a.value, b.value
    if av.shape != bv.shape:
        raise ValueError(f"sub: incompatible shapes {av.shape} - {bv.shape}")
    return tape._record(av - bv, (a.index, b.index), lambda g: (g, -g))


def clamp_min(a: Node, c: float) -> Node:
    """max(c, x) elementwise. The subgradient at the kink is 0: gradient
    is 0 exactly where x <= c, so once an input is clamped it stops moving."""
    mask = a.value > c
    out = np.maximum(a.value, c)
    return a.tape._record(out, (a.index,), lambda g: (g * mask,))


def relu(a: Node) -> Node:
    return clamp_min(a, 0.0)


def square(a: Node) -> Node:
    av = a.value
    return a.tape._record(av * av, (a.index,), lambda g: (2.0 * av * g,))


def sum_all(a: Node) -> Node:
    """Full reduction to a scalar (shape ())."""
    shape = a.value.shape
    out = np.asarray(a.value.sum(), dtype=np.float64)
    return a.tape._record(out, (a.index,), lambda g: (np.full(shape, float(g)),))


def scale(a: Node, c: float) -> Node:
    return a.tape._record(c * a.value, (a.index,), lambda g: (c * g,))


def l2_normalize_rows(a: Node) -> Node:
    """Scale each row of a (B,D) node to unit L2 norm."""
    av = a.value
    if av.ndim != 2:
        raise ValueError(f"l2_normalize_rows: expected 2-D input, got {av.shape}")
    norms = np.sqrt((av * av).sum(axis=1, keepdims=True))
    if np.any(norms == 0.0):
        raise ValueError("l2_normalize_rows: zero-norm row")
    out = av / norms

    def vjp(g):
        # d(x/|x|) projects the upstream gradient onto the tangent plane
        inner = (g * out).sum(axis=1, keepdims=True)
        return ((g - inner * out) / norms,)

    return a.tape._record(out, (a.index,), vjp)


def euclidean_rowwise(a: Node, b: Node) -> Node:
    """Per-row Euclidean distance between two (B,D) nodes; output (B,).

    Gradient at coincident rows (distance 0) is defined as the zero vector.
    """
    tape = _same_tape(a, b)
    av, bv = a.value, b.value
    if av.shape != bv.shape or av.ndim != 2:
        raise ValueError(f"euclidean_rowwise: incompatible shapes {av.shape}, {bv.shape}")
    diff = av - bv
    d = np.sqrt((diff * diff).sum(axis=1))

    def vjp(g):
        safe = np.where(d > 0.0, d, 1.0)
        ga = (g / safe)[:, None] * diff
        ga[d == 0.0] = 0.0
        return (ga, -ga)

    return tape._record(d, (a.index, b.index), vjp)


def cosine_rowwise(a: Node, b: Node) -> Node:
    """Per-row cosine similarity between two (B,D) nodes; output (B,)."""
    tape = _same_tape(a, b)
    av, bv = a.value, b.value
    if av.shape != bv.shape or av.ndim != 2:
        raise ValueError(f"cosine_rowwise: incompatible shapes {av.shape}, {bv.shape}")
    na = np.sqrt((av * av).sum(axis=1))
    nb = np.sqrt((bv * bv).sum(axis=1))
    if np.any(na == 0.0) or np.any(nb == 0.0):
        raise ValueError("cosine_rowwise: zero-norm row")
    dot = (av * bv).sum(axis=1)
    cos = dot / (na * nb)

    def vjp(g):
        ga = (g / (na * nb))[:, None] * bv - (g * cos / (na * na))[:, None] * av
        gb = (g / (na * nb))[:, None] * av - (g * cos / (nb * nb))[:, None] * bv
        return (ga, gb)

    return tape._record(cos, (a.index, b.index), vjp)


def backward(root: Node) -> None:
    """Reverse sweep from a scalar root; fills gradients for every node
    the root depends on. Read them back through Node.grad."""
    global _backward_calls
    _backward_calls += 1

    tape = root.tape
    if root.value.shape != ():
        raise ValueError(f"backward: root must be scalar-shaped, got {root.value.shape}")
    grads: list = [None] * len(tape._values)
    grads[root.index] = np.ones((), dtype=np.float64)
    for i in range(root.index, -1, -1):
        g = grads[i]
        if g is None or tape._vjps[i] is None:
            continue
        for parent, contrib in zip(tape._parents[i], tape._vjps[i](g)):
            if grads[parent] is None:
                grads[parent] = np.zeros_like(tape._values[parent])
            grads[parent] += contrib
    tape._grads = grads
