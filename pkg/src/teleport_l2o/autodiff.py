"""Reverse-mode automatic differentiation on a scalar tape.

Every node holds one real value, at most two parents and the local partial
derivatives with respect to them.  Nodes live in flat numpy arrays so that
dense blocks (matrix-vector products, elementwise gate arithmetic) can be
appended in bulk while the graph itself stays scalar.  The reverse sweep is
compiled with numba.

Scalar code can use :class:`Var`, a thin handle with operator overloads::

    tape = Tape()
    x = Var(tape, 3.0)
    y = x * x + sin(x)
    grads = tape.backward(y.id)
    grads[x.id]   # 2*3 + cos(3)
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np
from numba import njit

__all__ = [
    "AutodiffError",
    "DomainError",
    "NonFiniteError",
    "OPS",
    "Tape",
    "Var",
    "grad_check",
    "sin",
    "cos",
    "tanh",
    "sigmoid",
    "exp",
    "ln",
    "sqr",
    "powi",
]


class AutodiffError(ValueError):
    """Base class for tape construction errors."""


class NonFiniteError(AutodiffError):
    """A NaN or infinite value reached the tape."""


class DomainError(AutodiffError):
    """An operation was applied outside of its domain."""

    def __init__(self, op: str, msg: str):
        super().__init__(f"{op}: {msg}")
        self.op = op


# op tags stored in the int8 column
OPS = {
    "leaf": 0,
    "add": 1,
    "sub": 2,
    "mul": 3,
    "div": 4,
    "neg": 5,
    "sin": 6,
    "cos": 7,
    "tanh": 8,
    "sigmoid": 9,
    "exp": 10,
    "ln": 11,
    "sqr": 12,
    "powi": 13,
}
OP_NAMES = {v: k for k, v in OPS.items()}
_BINARY = {"add", "sub", "mul", "div"}


def _sigmoid(x):
    # numerically stable for large |x|
    return np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))


def _forward(op, a, b=None, k=None):
    """Return (value, dparent1, dparent2) arrays for an elementwise op."""
    if op == "add":
        return a + b, np.ones_like(a), np.ones_like(a)
    if op == "sub":
        return a - b, np.ones_like(a), -np.ones_like(a)
    if op == "mul":
        return a * b, b.copy(), a.copy()
    if op == "div":
        if np.any(b == 0.0):
            raise DomainError("div", "division by zero")
        return a / b, 1.0 / b, -a / (b * b)
    if op == "neg":
        return -a, -np.ones_like(a), None
    if op == "sin":
        return np.sin(a), np.cos(a), None
    if op == "cos":
        return np.cos(a), -np.sin(a), None
    if op == "tanh":
        t = np.tanh(a)
        return t, 1.0 - t * t, None
    if op == "sigmoid":
        s = _sigmoid(a)
        return s, s * (1.0 - s), None
    if op == "exp":
        e = np.exp(a)
        return e, e.copy(), None
    if op == "ln":
        if np.any(a <= 0.0):
            raise DomainError("ln", "argument must be positive")
        return np.log(a), 1.0 / a, None
    if op == "sqr":
        return a * a, 2.0 * a, None
    if op == "powi":
        if k is None or int(k) != k:
            raise DomainError("powi", "integer exponent required")
        k = int(k)
        if k < 0 and np.any(a == 0.0):
            raise DomainError("powi", "zero base with negative exponent")
        if k == 0:
            return np.ones_like(a), np.zeros_like(a), None
        return a**k, k * a ** (k - 1), None
    raise DomainError(str(op), "unknown operation")


def _scalar_forward(op, a, b, k):
    """Scalar twin of :func:`_forward` using ``math`` (no array overhead)."""
    if op == "add":
        return a + b, 1.0, 1.0
    if op == "sub":
        return a - b, 1.0, -1.0
    if op == "mul":
        return a * b, b, a
    if op == "div":
        if b == 0.0:
            raise DomainError("div", "division by zero")
        return a / b, 1.0 / b, -a / (b * b)
    if op == "neg":
        return -a, -1.0, 0.0
    if op == "sin":
        return math.sin(a), math.cos(a), 0.0
    if op == "cos":
        return math.cos(a), -math.sin(a), 0.0
    if op == "tanh":
        t = math.tanh(a)
        return t, 1.0 - t * t, 0.0
    if op == "sigmoid":
        s = _py_sigmoid(a)
        return s, s * (1.0 - s), 0.0
    if op == "exp":
        try:
            e = math.exp(a)
        except OverflowError:
            raise NonFiniteError("exp overflow") from None
        return e, e, 0.0
    if op == "ln":
        if a <= 0.0:
            raise DomainError("ln", "argument must be positive")
        return math.log(a), 1.0 / a, 0.0
    if op == "sqr":
        return a * a, 2.0 * a, 0.0
    if op == "powi":
        if k is None or int(k) != k:
            raise DomainError("powi", "integer exponent required")
        k = int(k)
        if k < 0 and a == 0.0:
            raise DomainError("powi", "zero base with negative exponent")
        if k == 0:
            return 1.0, 0.0, 0.0
        return a**k, k * a ** (k - 1), 0.0
    raise DomainError(str(op), "unknown operation")


def _py_sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


@njit(cache=True)
def _sweep(p1, p2, g1, g2, adj, start):
    for i in range(start, -1, -1):
        a = adj[i]
        if a == 0.0:
            continue
        j = p1[i]
        if j >= 0:
            adj[j] += a * g1[i]
        j = p2[i]
        if j >= 0:
            adj[j] += a * g2[i]


class Tape:
    """Append-only scalar computation graph.

    Node ids are dense and every node's parents have smaller ids, so a single
    reverse pass over ids is a valid topological order.
    """

    def __init__(self, capacity: int = 1024):
        capacity = max(int(capacity), 16)
        self._op = np.empty(capacity, dtype=np.int8)
        self._p1 = np.empty(capacity, dtype=np.int64)
        self._p2 = np.empty(capacity, dtype=np.int64)
        self._val = np.empty(capacity, dtype=np.float64)
        self._g1 = np.empty(capacity, dtype=np.float64)
        self._g2 = np.empty(capacity, dtype=np.float64)
        self.next_id = 0

    def __len__(self) -> int:
        return self.next_id

    def reset(self) -> None:
        """Drop every node but keep the allocated buffers."""
        self.next_id = 0

    # -- storage ---------------------------------------------------------
    def _reserve(self, n: int) -> int:
        start = self.next_id
        need = start + n
        cap = self._val.shape[0]
        if need > cap:
            new = max(need, 2 * cap)
            for name in ("_op", "_p1", "_p2", "_val", "_g1", "_g2"):
                old = getattr(self, name)
                arr = np.empty(new, dtype=old.dtype)
                arr[:start] = old[:start]
                setattr(self, name, arr)
        self.next_id = need
        return start

    def _append(self, op: int, p1, p2, val, g1, g2) -> np.ndarray:
        val = np.asarray(val, dtype=np.float64).ravel()
        n = val.shape[0]
        if not np.all(np.isfinite(val)):
            raise NonFiniteError(f"non-finite value produced by {OP_NAMES[op]}")
        if g1 is not None:
            g1 = np.broadcast_to(np.asarray(g1, dtype=np.float64).ravel(), (n,))
            if not np.all(np.isfinite(g1)):
                raise NonFiniteError(f"non-finite derivative in {OP_NAMES[op]}")
        if g2 is not None:
            g2 = np.broadcast_to(np.asarray(g2, dtype=np.float64).ravel(), (n,))
            if not np.all(np.isfinite(g2)):
                raise NonFiniteError(f"non-finite derivative in {OP_NAMES[op]}")
        start = self._reserve(n)
        sl = slice(start, start + n)
        self._op[sl] = op
        self._val[sl] = val
        if p1 is not None:
            self._p1[sl] = p1
            self._g1[sl] = g1
        else:
            self._p1[sl] = -1
            self._g1[sl] = 0.0
        if p2 is not None:
            self._p2[sl] = p2
            self._g2[sl] = g2
        else:
            self._p2[sl] = -1
            self._g2[sl] = 0.0
        return np.arange(start, start + n, dtype=np.int64)

    def _check_ids(self, ids: np.ndarray) -> None:
        if ids.size and (ids.min() < 0 or ids.max() >= self.next_id):
            raise IndexError("node id not on this tape")

    # -- construction ----------------------------------------------------
    def var(self, value: float) -> int:
        """Append a leaf and return its id."""
        if not math.isfinite(value):
            raise NonFiniteError(f"leaf value {value!r} is not finite")
        return int(self._append(0, None, None, [value], None, None)[0])

    def vars(self, values) -> np.ndarray:
        """Append one leaf per entry of ``values``; returns ids with the same shape."""
        values = np.asarray(values, dtype=np.float64)
        if not np.all(np.isfinite(values)):
            raise NonFiniteError("leaf values must be finite")
        return self._append(0, None, None, values, None, None).reshape(values.shape)

    def apply(self, op: str, *args: int, k: int | None = None) -> int:
        """Append one scalar op node over existing node ids."""
        arity = 2 if op in _BINARY else 1
        if len(args) != arity:
            raise TypeError(f"{op} takes {arity} argument(s), got {len(args)}")
        if op not in OPS or op == "leaf":
            raise DomainError(str(op), "unknown operation")
        for a in args:
            if not 0 <= a < self.next_id:
                raise IndexError("node id not on this tape")
        a = int(args[0])
        x = float(self._val[a])
        if arity == 2:
            b = int(args[1])
            y = float(self._val[b])
            val, g1, g2 = _scalar_forward(op, x, y, k)
        else:
            b = -1
            val, g1, g2 = _scalar_forward(op, x, 0.0, k)
        if not (math.isfinite(val) and math.isfinite(g1) and math.isfinite(g2)):
            raise NonFiniteError(f"non-finite value produced by {op}")
        i = self._reserve(1)
        self._op[i] = OPS[op]
        self._val[i] = val
        self._p1[i] = a
        self._g1[i] = g1
        self._p2[i] = b
        self._g2[i] = g2
        return i

    def apply_array(self, op: str, a, b=None, k: int | None = None) -> np.ndarray:
        """Elementwise op over id arrays (broadcast against each other)."""
        if op not in OPS or op == "leaf":
            raise DomainError(str(op), "unknown operation")
        a = np.asarray(a, dtype=np.int64)
        if op in _BINARY:
            if b is None:
                raise TypeError(f"{op} needs two operands")
            b = np.asarray(b, dtype=np.int64)
            a, b = np.broadcast_arrays(a, b)
            self._check_ids(a)
            self._check_ids(b)
            shape = a.shape
            a, b = a.ravel(), b.ravel()
            with np.errstate(all="ignore"):
                val, g1, g2 = _forward(op, self._val[a], self._val[b])
            return self._append(OPS[op], a, b, val, g1, g2).reshape(shape)
        self._check_ids(a)
        shape = a.shape
        a = a.ravel()
        with np.errstate(all="ignore"):
            val, g1, _ = _forward(op, self._val[a], k=k)
        return self._append(OPS[op], a, None, val, g1, None).reshape(shape)

    def matvec(self, w_ids, x_ids, bias_ids=None) -> np.ndarray:
        """``W @ x (+ bias)`` expanded into scalar mul and add chains.

        ``w_ids`` has shape (m, k), ``x_ids`` shape (k,).  Row sums are
        accumulated left to right, starting from the bias when given.
        """
        w_ids = np.asarray(w_ids, dtype=np.int64)
        x_ids = np.asarray(x_ids, dtype=np.int64)
        m, k = w_ids.shape
        if x_ids.shape != (k,):
            raise ValueError("matvec shape mismatch")
        self._check_ids(w_ids)
        self._check_ids(x_ids)
        wv = self._val[w_ids]
        xv = self._val[x_ids]
        xb = np.broadcast_to(x_ids, (m, k))
        prod = wv * xv[None, :]
        # mul nodes stored column-major so column j is a contiguous block
        mul = self._append(3, w_ids.T.ravel(), xb.T.ravel(), prod.T.ravel(), np.broadcast_to(xv[:, None], (k, m)).ravel(), wv.T.ravel())
        mul = mul.reshape(k, m)
        if bias_ids is not None:
            bias_ids = np.asarray(bias_ids, dtype=np.int64).reshape(m)
            self._check_ids(bias_ids)
            terms = np.concatenate([self._val[bias_ids][:, None], prod], axis=1)
            first, cols = bias_ids, mul
        else:
            terms = prod
            first, cols = mul[0], mul[1:]
        nadd = cols.shape[0]
        if nadd == 0:
            return np.asarray(first, dtype=np.int64)
        # sequential cumsum reproduces the chained additions bit for bit
        sums = np.cumsum(terms, axis=1)[:, 1:]
        add_ids = self.next_id + np.arange(nadd * m, dtype=np.int64).reshape(nadd, m)
        prev = np.vstack([first[None, :], add_ids[:-1]])
        self._append(1, prev.ravel(), cols.ravel(), sums.T.ravel(), 1.0, 1.0)
        return add_ids[-1].copy()

    def sum(self, ids) -> int:
        """Left-to-right sum of the given nodes."""
        ids = np.asarray(ids, dtype=np.int64).ravel()
        if ids.size == 0:
            raise ValueError("sum of empty sequence")
        acc = int(ids[0])
        for j in ids[1:]:
            acc = self.apply("add", acc, int(j))
        return acc

    # -- inspection -------------------------------------------------------
    def value(self, node: int) -> float:
        return float(self._val[node])

    def values(self, ids) -> np.ndarray:
        return self._val[np.asarray(ids, dtype=np.int64)]

    def node(self, node: int) -> dict:
        """Readable view of a single node (for debugging and tests)."""
        if not 0 <= node < self.next_id:
            raise IndexError(node)
        parents = tuple(int(p) for p in (self._p1[node], self._p2[node]) if p >= 0)
        grads = (float(self._g1[node]), float(self._g2[node]))[: len(parents)]
        return {"op": OP_NAMES[int(self._op[node])], "parents": parents, "value": float(self._val[node]), "local_grads": grads}

    def backward(self, output: int) -> np.ndarray:
        """Adjoints of ``output`` with respect to every node, indexed by id."""
        output = int(output)
        if not 0 <= output < self.next_id:
            raise IndexError("output node not on tape")
        n = self.next_id
        adj = np.zeros(n, dtype=np.float64)
        adj[output] = 1.0
        _sweep(self._p1[:n], self._p2[:n], self._g1[:n], self._g2[:n], adj, output)
        return adj


class Var:
    """Scalar handle bound to a tape; arithmetic appends nodes."""

    __slots__ = ("tape", "id")

    def __init__(self, tape: Tape, value: float | None = None, node: int | None = None):
        self.tape = tape
        self.id = tape.var(float(value)) if node is None else int(node)

    @property
    def value(self) -> float:
        return self.tape.value(self.id)

    def _lift(self, other) -> int:
        if isinstance(other, Var):
            if other.tape is not self.tape:
                raise ValueError("operands live on different tapes")
            return other.id
        return self.tape.var(float(other))

    def _bin(self, op, other, swap=False):
        o = self._lift(other)
        a, b = (o, self.id) if swap else (self.id, o)
        return Var(self.tape, node=self.tape.apply(op, a, b))

    def __add__(self, o):
        return self._bin("add", o)

    def __radd__(self, o):
        return self._bin("add", o, swap=True)

    def __sub__(self, o):
        return self._bin("sub", o)

    def __rsub__(self, o):
        return self._bin("sub", o, swap=True)

    def __mul__(self, o):
        return self._bin("mul", o)

    def __rmul__(self, o):
        return self._bin("mul", o, swap=True)

    def __truediv__(self, o):
        return self._bin("div", o)

    def __rtruediv__(self, o):
        return self._bin("div", o, swap=True)

    def __neg__(self):
        return Var(self.tape, node=self.tape.apply("neg", self.id))

    def __pow__(self, k: int):
        return powi(self, k)

    def __float__(self) -> float:
        return self.value

    def __repr__(self) -> str:
        return f"Var(id={self.id}, value={self.value!r})"


def _unary(op: str, fn: Callable[[float], float]):
    def f(x, _op=op):
        if isinstance(x, Var):
            return Var(x.tape, node=x.tape.apply(_op, x.id))
        return fn(float(x))

    f.__name__ = op
    return f


def _py_ln(x: float) -> float:
    if x <= 0:
        raise DomainError("ln", "argument must be positive")
    return math.log(x)


sin = _unary("sin", math.sin)
cos = _unary("cos", math.cos)
tanh = _unary("tanh", math.tanh)
sigmoid = _unary("sigmoid", _py_sigmoid)
exp = _unary("exp", math.exp)
ln = _unary("ln", _py_ln)
sqr = _unary("sqr", lambda v: v * v)


def powi(x, k: int):
    if isinstance(x, Var):
        return Var(x.tape, node=x.tape.apply("powi", x.id, k=k))
    return float(x) ** int(k)


def grad_check(f: Callable[[Sequence[Var]], Var], point, eps: float = 1e-5) -> float:
    """Max over coordinates of |autodiff - central difference| / (1 + |central difference|).

    ``f`` builds its output from a list of leaf :class:`Var` handles.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    point = np.asarray(point, dtype=np.float64).ravel()

    def value_at(p) -> float:
        tape = Tape()
        out = f([Var(tape, v) for v in p])
        return out.value if isinstance(out, Var) else float(out)

    tape = Tape()
    leaves = [Var(tape, v) for v in point]
    out = f(leaves)
    if not isinstance(out, Var):
        ad = np.zeros_like(point)  # output does not depend on the inputs
    else:
        adj = tape.backward(out.id)
        ad = np.array([adj[v.id] for v in leaves])
    worst = 0.0
    for i in range(point.size):
        up, dn = point.copy(), point.copy()
        up[i] += eps
        dn[i] -= eps
        fd = (value_at(up) - value_at(dn)) / (2 * eps)
        worst = max(worst, abs(ad[i] - fd) / (1.0 + abs(fd)))
    return worst
