"""Reverse-mode automatic differentiation over dense 2-D float64 matrices.

A :class:`Graph` records nodes as they are created. Shapes are inferred and
checked at construction time, values are computed lazily by
:func:`evaluate`, and :func:`backward` propagates adjoints from a scalar root
to every registered parameter. Build a graph once and re-evaluate it after
each optimizer step; parameter nodes read their value from the registry.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Adam",
    "Graph",
    "Node",
    "ShapeError",
    "backward",
    "evaluate",
]

GRAD_CLIP = 10.0


class ShapeError(ValueError):
    """Raised when an operation is built from operands of incompatible shape."""


def as_matrix(value) -> np.ndarray:
    arr = np.array(value, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    elif arr.ndim != 2:
        raise ShapeError(f"expected rank <= 2, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("matrix entries must be finite")
    return arr


@dataclass(eq=False)
class Node:
    op: str
    parents: tuple["Node", ...]
    shape: tuple[int, int]
    index: int
    name: str | None = None
    meta: object = None
    value: np.ndarray | None = None
    adjoint: np.ndarray | None = None

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Node#{self.index}<{self.op}{label} {self.shape[0]}x{self.shape[1]}>"

    # Operator sugar; all shape checks happen in Graph methods.
    def __matmul__(self, other: "Node") -> "Node":
        return self.graph.matmul(self, other)

    def __add__(self, other: "Node") -> "Node":
        return self.graph.add(self, other)

    def __mul__(self, other: "Node") -> "Node":
        return self.graph.mul(self, other)

    graph: "Graph" = field(default=None, repr=False)


class Graph:
    """Append-only expression graph with a named parameter registry."""

    def __init__(self) -> None:
        self.nodes: list[Node] = []
        self.params: dict[str, np.ndarray] = {}
        self._param_nodes: dict[str, Node] = {}
        self._order_cache: dict[int, list[Node]] = {}

    def _new(self, op, parents, shape, name=None, meta=None, value=None) -> Node:
        node = Node(op, tuple(parents), shape, len(self.nodes), name, meta, value)
        node.graph = self
        for p in parents:
            if p.graph is not self:
                raise ValueError(f"{p!r} belongs to a different graph")
        self.nodes.append(node)
        return node

    # -- leaves ---------------------------------------------------------
    def param(self, name: str, value) -> Node:
        if name in self._param_nodes:
            raise ValueError(f"duplicate parameter {name!r}")
        arr = as_matrix(value).copy()
        self.params[name] = arr
        node = self._new("param", (), arr.shape, name=name)
        self._param_nodes[name] = node
        return node

    def const(self, value, name: str | None = None) -> Node:
        arr = as_matrix(value)
        return self._new("const", (), arr.shape, name=name, value=arr)

    def set_const(self, node: Node, value) -> None:
        arr = as_matrix(value)
        if node.op != "const" or arr.shape != node.shape:
            raise ShapeError(f"cannot rebind {node!r} to shape {arr.shape}")
        node.value = arr

    def param_node(self, name: str) -> Node:
        return self._param_nodes[name]

    # -- primitives -----------------------------------------------------
    def matmul(self, a: Node, b: Node) -> Node:
        if a.shape[1] != b.shape[0]:
            raise ShapeError(f"matmul: {a!r} has shape {a.shape}, {b!r} has shape {b.shape}")
        return self._new("matmul", (a, b), (a.shape[0], b.shape[1]))

    def add(self, a: Node, b: Node) -> Node:
        if a.shape != b.shape:
            raise ShapeError(f"add: {a!r} has shape {a.shape}, {b!r} has shape {b.shape}")
        return self._new("add", (a, b), a.shape)

    def mul(self, a: Node, b: Node) -> Node:
        if a.shape != b.shape:
            raise ShapeError(f"mul: {a!r} has shape {a.shape}, {b!r} has shape {b.shape}")
        return self._new("mul", (a, b), a.shape)

    def tanh(self, a: Node) -> Node:
        return self._new("tanh", (a,), a.shape)

    def sigmoid(self, a: Node) -> Node:
        return self._new("sigmoid", (a,), a.shape)

    def softplus(self, a: Node) -> Node:
        return self._new("softplus", (a,), a.shape)

    def sqrt_abs(self, a: Node) -> Node:
        """Elementwise sqrt(|x|); the derivative is clipped to +-GRAD_CLIP."""
        return self._new("sqrt_abs", (a,), a.shape)

    def concat(self, parts: list[Node]) -> Node:
        parts = list(parts)
        if not parts:
            raise ShapeError("concat: no operands")
        rows = parts[0].shape[0]
        for p in parts[1:]:
            if p.shape[0] != rows:
                shapes = ", ".join(f"{q!r}:{q.shape}" for q in parts)
                raise ShapeError(f"concat: row counts differ ({shapes})")
        return self._new("concat", parts, (rows, sum(p.shape[1] for p in parts)))

    def mean_rows(self, a: Node, row_sets) -> Node:
        """One output row per index set: the mean of those rows of ``a``.

        An empty set yields a zero row.
        """
        sets = [np.asarray(list(s), dtype=np.int64) for s in row_sets]
        for s in sets:
            if s.size and (s.min() < 0 or s.max() >= a.shape[0]):
                raise ShapeError(f"mean_rows: index out of range for {a!r} with shape {a.shape}")
        return self._new("mean_rows", (a,), (len(sets), a.shape[1]), meta=sets)

    def mse(self, pred: Node, target: Node) -> Node:
        """Mean of squared differences, reduced to 1x1."""
        if pred.shape != target.shape:
            raise ShapeError(f"mse: {pred!r} has shape {pred.shape}, {target!r} has shape {target.shape}")
        return self._new("mse", (pred, target), (1, 1))

    def sumsq(self, a: Node) -> Node:
        return self._new("sumsq", (a,), (1, 1))

    def scale(self, a: Node, c: float) -> Node:
        return self._new("scale", (a,), a.shape, meta=float(c))

    # -- convenience ----------------------------------------------------
    def affine(self, x: Node, w: Node) -> Node:
        """``[x, 1] @ w``: bias as the last row of ``w``."""
        ones = self.const(np.ones((x.shape[0], 1)))
        return self.matmul(self.concat([x, ones]), w)

    def total(self, terms: list[Node]) -> Node:
        out = terms[0]
        for t in terms[1:]:
            out = self.add(out, t)
        return out

    def ancestors(self, root: Node) -> list[Node]:
        cached = self._order_cache.get(root.index)
        if cached is not None:
            return cached
        seen = np.zeros(len(self.nodes), dtype=bool)
        stack = [root]
        while stack:
            n = stack.pop()
            if seen[n.index]:
                continue
            seen[n.index] = True
            stack.extend(n.parents)
        order = [n for n in self.nodes[: root.index + 1] if seen[n.index]]
        self._order_cache[root.index] = order
        return order


def _softplus(x):
    return np.logaddexp(0.0, x)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _forward(g: Graph, n: Node) -> np.ndarray:
    op = n.op
    if op == "param":
        return g.params[n.name]
    if op == "const":
        return n.value
    v = [p.value for p in n.parents]
    if op == "matmul":
        return v[0] @ v[1]
    if op == "add":
        return v[0] + v[1]
    if op == "mul":
        return v[0] * v[1]
    if op == "tanh":
        return np.tanh(v[0])
    if op == "sigmoid":
        return _sigmoid(v[0])
    if op == "softplus":
        return _softplus(v[0])
    if op == "sqrt_abs":
        return np.sqrt(np.abs(v[0]))
    if op == "concat":
        return np.concatenate(v, axis=1)
    if op == "mean_rows":
        x = v[0]
        out = np.zeros(n.shape)
        for i, s in enumerate(n.meta):
            if s.size:
                out[i] = x[s].mean(axis=0)
        return out
    if op == "mse":
        d = v[0] - v[1]
        return np.array([[np.mean(d * d)]])
    if op == "sumsq":
        return np.array([[np.sum(v[0] * v[0])]])
    if op == "scale":
        return n.meta * v[0]
    raise ValueError(f"unknown op {op}")


def evaluate(graph: Graph, root: Node) -> np.ndarray:
    """Compute ``root`` and cache every intermediate value it depends on."""
    for n in graph.ancestors(root):
        n.value = _forward(graph, n)
    return root.value


def _local_grads(n: Node, upstream: np.ndarray) -> list[np.ndarray]:
    op = n.op
    v = [p.value for p in n.parents]
    if op == "matmul":
        return [upstream @ v[1].T, v[0].T @ upstream]
    if op == "add":
        return [upstream, upstream]
    if op == "mul":
        return [upstream * v[1], upstream * v[0]]
    if op == "tanh":
        return [upstream * (1.0 - n.value * n.value)]
    if op == "sigmoid":
        return [upstream * n.value * (1.0 - n.value)]
    if op == "softplus":
        return [upstream * _sigmoid(v[0])]
    if op == "sqrt_abs":
        x = v[0]
        with np.errstate(divide="ignore", invalid="ignore"):
            d = np.sign(x) / (2.0 * np.sqrt(np.abs(x)))
        d = np.clip(np.nan_to_num(d, nan=0.0), -GRAD_CLIP, GRAD_CLIP)
        return [upstream * d]
    if op == "concat":
        out, start = [], 0
        for p in n.parents:
            out.append(upstream[:, start : start + p.shape[1]])
            start += p.shape[1]
        return out
    if op == "mean_rows":
        g = np.zeros(n.parents[0].shape)
        for i, s in enumerate(n.meta):
            if s.size:
                np.add.at(g, s, upstream[i] / s.size)
        return [g]
    if op == "mse":
        d = v[0] - v[1]
        k = 2.0 * upstream[0, 0] / d.size
        return [k * d, -k * d]
    if op == "sumsq":
        return [2.0 * upstream[0, 0] * v[0]]
    if op == "scale":
        return [n.meta * upstream]
    raise ValueError(f"no gradient for op {op}")


def backward(graph: Graph, root: Node) -> dict[str, np.ndarray]:
    """Return d(root)/d(param) for every registered parameter.

    ``evaluate`` must have been called on ``root`` first. Parameters that do
    not influence ``root`` get a zero adjoint.
    """
    if root.shape != (1, 1):
        raise ShapeError(f"backward: root {root!r} is not scalar")
    if root.value is None:
        raise RuntimeError("backward called before evaluate")
    order = graph.ancestors(root)
    for n in order:
        n.adjoint = None
    root.adjoint = np.ones((1, 1))
    for n in reversed(order):
        if n.adjoint is None or not n.parents:
            continue
        for p, g in zip(n.parents, _local_grads(n, n.adjoint)):
            if p.op == "const":
                continue
            p.adjoint = g if p.adjoint is None else p.adjoint + g
    grads = {}
    for name, node in graph._param_nodes.items():
        adj = node.adjoint if node in order else None
        grads[name] = np.zeros(node.shape) if adj is None else adj
    return grads


@dataclass
class Adam:
    """Adam with an optional L2 term added to the gradient (2 * l2 * p)."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    l2: float = 0.0
    step_count: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
        """Update ``params`` in place and return it."""
        for name, g in grads.items():
            if g.shape != params[name].shape:
                raise ShapeError(f"adjoint for {name!r} has shape {g.shape}, parameter {params[name].shape}")
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite adjoint for parameter {name!r}")
        self.step_count += 1
        t = self.step_count
        for name in sorted(grads):
            p = params[name]
            g = grads[name]
            if self.l2:
                g = g + 2.0 * self.l2 * p
            m = self.m.get(name)
            if m is None:
                m = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            m = self.beta1 * m + (1.0 - self.beta1) * g
            v = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            self.m[name], self.v[name] = m, v
            mhat = m / (1.0 - self.beta1**t)
            vhat = v / (1.0 - self.beta2**t)
            p -= self.lr * mhat / (np.sqrt(vhat) + self.eps)
        return params
