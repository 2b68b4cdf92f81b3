"""Minimal reverse-mode autodiff on numpy float64.

Everything learned in this package (history encoders, cascade heads,
value/advantage towers, embedding tables) is built from the handful of ops
here. Tensors are either matrices of shape (batch, dim) or scalars of shape
(); gradients accumulate into parameter tensors until ``zero_grads``.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, UsageError


_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (forward values only)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, parents=(), backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = np.zeros_like(self.data) if requires_grad else None
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={self.grad is not None})"

    def item(self) -> float:
        return float(self.data)

    def __matmul__(self, other):
        return matmul(self, other)

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)


def const(data) -> Tensor:
    """Wrap an array as a non-learnable tensor."""
    return Tensor(data)


def _track(a: Tensor) -> bool:
    return _grad_enabled and (a.requires_grad or a._parents)


def _accum(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        # materialize on first touch; broadcasting back up is never needed
        # because callers pass g already shaped like t.data
        t.grad = np.array(g, dtype=t.data.dtype, copy=True)
    else:
        t.grad += g


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to the original shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ConfigError(
            f"matmul shape mismatch: {a.data.shape} @ {b.data.shape}"
        )
    out_data = a.data @ b.data
    if not (_track(a) or _track(b)):
        return Tensor(out_data)

    def backward(g):
        if _track(a):
            _accum(a, g @ b.data.T)
        if _track(b):
            _accum(b, a.data.T @ g)

    return Tensor(out_data, parents=(a, b), backward=backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data + b.data
    if not (_track(a) or _track(b)):
        return Tensor(out_data)

    def backward(g):
        if _track(a):
            _accum(a, _unbroadcast(g, a.data.shape))
        if _track(b):
            _accum(b, _unbroadcast(g, b.data.shape))

    return Tensor(out_data, parents=(a, b), backward=backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data - b.data
    if not (_track(a) or _track(b)):
        return Tensor(out_data)

    def backward(g):
        if _track(a):
            _accum(a, _unbroadcast(g, a.data.shape))
        if _track(b):
            _accum(b, _unbroadcast(-g, b.data.shape))

    return Tensor(out_data, parents=(a, b), backward=backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data * b.data
    if not (_track(a) or _track(b)):
        return Tensor(out_data)

    def backward(g):
        if _track(a):
            _accum(a, _unbroadcast(g * b.data, a.data.shape))
        if _track(b):
            _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return Tensor(out_data, parents=(a, b), backward=backward)


def scale(a: Tensor, c: float) -> Tensor:
    out_data = a.data * c
    if not _track(a):
        return Tensor(out_data)

    def backward(g):
        _accum(a, g * c)

    return Tensor(out_data, parents=(a,), backward=backward)


def sigmoid(a: Tensor) -> Tensor:
    out_data = 1.0 / (1.0 + np.exp(-a.data))
    if not _track(a):
        return Tensor(out_data)

    def backward(g):
        _accum(a, g * out_data * (1.0 - out_data))

    return Tensor(out_data, parents=(a,), backward=backward)


def tanh(a: Tensor) -> Tensor:
    out_data = np.tanh(a.data)
    if not _track(a):
        return Tensor(out_data)

    def backward(g):
        _accum(a, g * (1.0 - out_data * out_data))

    return Tensor(out_data, parents=(a,), backward=backward)


def relu(a: Tensor) -> Tensor:
    out_data = np.maximum(a.data, 0.0)
    if not _track(a):
        return Tensor(out_data)

    def backward(g):
        _accum(a, g * (a.data > 0.0))

    return Tensor(out_data, parents=(a,), backward=backward)


def square(a: Tensor) -> Tensor:
    out_data = a.data * a.data
    if not _track(a):
        return Tensor(out_data)

    def backward(g):
        _accum(a, g * 2.0 * a.data)

    return Tensor(out_data, parents=(a,), backward=backward)


def concat(parts: Sequence[Tensor], axis: int = 1) -> Tensor:
    datas = [p.data for p in parts]
    out_data = np.concatenate(datas, axis=axis)
    if not any(_track(p) for p in parts):
        return Tensor(out_data)
    widths = [d.shape[axis] for d in datas]
    offsets = np.cumsum([0] + widths)

    def backward(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if _track(p):
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                _accum(p, g[tuple(sl)])

    return Tensor(out_data, parents=tuple(parts), backward=backward)


def row_sum(a: Tensor) -> Tensor:
    """Sum over the feature axis: (B, D) -> (B, 1)."""
    out_data = a.data.sum(axis=1, keepdims=True)
    if not _track(a):
        return Tensor(out_data)

    def backward(g):
        _accum(a, np.broadcast_to(g, a.data.shape))

    return Tensor(out_data, parents=(a,), backward=backward)


def mean_all(a: Tensor) -> Tensor:
    """Mean over all entries, producing a scalar tensor."""
    out_data = np.asarray(a.data.mean())
    if not _track(a):
        return Tensor(out_data)
    inv = 1.0 / a.data.size

    def backward(g):
        _accum(a, np.full_like(a.data, g * inv))

    return Tensor(out_data, parents=(a,), backward=backward)


def backward(loss: Tensor) -> None:
    """Reverse-mode pass from a scalar loss; accumulates into .grad slots."""
    if loss.data.size != 1:
        raise UsageError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    if not loss._parents and not loss.requires_grad:
        raise UsageError("backward called on a tensor with no recorded graph")

    topo: list[Tensor] = []
    seen: set[int] = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))

    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


# ---------------------------------------------------------------------------
# Parameters, layers, optimizers
# ---------------------------------------------------------------------------

CHECKPOINT_MAGIC = "recads-checkpoint v1"


class ParamStore:
    """Named parameter tensors with one gradient slot each and a step counter."""

    def __init__(self):
        self.params: dict[str, Tensor] = {}
        self.step_count = 0

    def add(self, name: str, data: np.ndarray) -> Tensor:
        if name in self.params:
            raise ConfigError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(data, dtype=np.float64), requires_grad=True)
        self.params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def names(self) -> list[str]:
        return list(self.params)

    def zero_grads(self) -> None:
        for t in self.params.values():
            t.grad[...] = 0.0

    def n_scalars(self) -> int:
        return sum(t.data.size for t in self.params.values())

    def copy_from(self, other: "ParamStore") -> None:
        """Overwrite this store's values with another's (shape-checked)."""
        if self.names() != other.names():
            raise ConfigError("parameter stores have different names")
        for name, t in self.params.items():
            src = other.params[name]
            if src.data.shape != t.data.shape:
                raise ConfigError(f"shape mismatch for {name!r}")
            t.data[...] = src.data

    def save(self, path) -> None:
        lines = [CHECKPOINT_MAGIC, f"step {self.step_count}"]
        for name, t in self.params.items():
            dims = "x".join(str(d) for d in t.data.shape)
            lines.append(f"tensor {name} {dims}")
            flat = t.data.reshape(-1)
            lines.append(" ".join(v.hex() for v in flat.tolist()))
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")

    def load(self, path) -> None:
        """Load values into an existing store; names and shapes must match."""
        step, values = read_checkpoint(path)
        if set(values) != set(self.params):
            missing = set(self.params) - set(values)
            extra = set(values) - set(self.params)
            raise ConfigError(f"checkpoint mismatch: missing={missing}, extra={extra}")
        for name, arr in values.items():
            if arr.shape != self.params[name].data.shape:
                raise ConfigError(f"checkpoint shape mismatch for {name!r}")
            self.params[name].data[...] = arr
        self.step_count = step


def read_checkpoint(path) -> tuple[int, dict[str, np.ndarray]]:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != CHECKPOINT_MAGIC:
        raise ConfigError(f"{path}: not a recads checkpoint")
    step = int(lines[1].split()[1])
    values: dict[str, np.ndarray] = {}
    i = 2
    while i < len(lines):
        if not lines[i].strip():
            i += 1
            continue
        _, name, dims = lines[i].split()
        shape = tuple(int(d) for d in dims.split("x"))
        flat = np.array([float.fromhex(tok) for tok in lines[i + 1].split()])
        values[name] = flat.reshape(shape)
        i += 2
    return step, values


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape or (fan_in, fan_out))


ACTIVATIONS: dict[str, Callable[[Tensor], Tensor]] = {
    "identity": lambda t: t,
    "relu": relu,
    "tanh": tanh,
}


class Dense:
    """One dense layer, weights stored as (in, out) so forward is x @ W + b."""

    def __init__(self, store: ParamStore, name: str, in_dim: int, out_dim: int,
                 rng: np.random.Generator):
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.W = store.add(f"{name}/W", glorot(rng, in_dim, out_dim))
        self.b = store.add(f"{name}/b", np.zeros(out_dim))


def dense_forward(x: Tensor, layer: Dense, activation: str = "identity") -> Tensor:
    if x.data.shape[1] != layer.in_dim:
        raise ConfigError(
            f"dense input dim {x.data.shape[1]} != layer in_dim {layer.in_dim}"
        )
    if activation not in ACTIVATIONS:
        raise ConfigError(f"unknown activation {activation!r}")
    return ACTIVATIONS[activation](add(matmul(x, layer.W), layer.b))


class Mlp:
    """Stack of dense layers, relu on hidden layers, linear output.

    ``final_scale`` multiplies the output layer's initial weights. Passing
    0.0 starts every output at its bias, which is the right prior when the
    outputs are heads whose true values barely differ: any initial spread
    between them is noise that a downstream argmax would harvest.
    """

    def __init__(self, store: ParamStore, name: str, in_dim: int,
                 hidden: Sequence[int], out_dim: int, rng: np.random.Generator,
                 final_scale: float = 1.0):
        dims = [in_dim, *hidden, out_dim]
        self.layers = [
            Dense(store, f"{name}/l{i}", dims[i], dims[i + 1], rng)
            for i in range(len(dims) - 1)
        ]
        if final_scale != 1.0:
            self.layers[-1].W.data *= final_scale

    def __call__(self, x: Tensor) -> Tensor:
        for layer in self.layers[:-1]:
            x = dense_forward(x, layer, "relu")
        return dense_forward(x, self.layers[-1], "identity")


class GruCell:
    """Gated recurrent unit; update gate z scales the candidate state."""

    def __init__(self, store: ParamStore, name: str, in_dim: int, hidden: int,
                 rng: np.random.Generator):
        self.in_dim = in_dim
        self.hidden = hidden
        p = store.add
        self.Wz = p(f"{name}/Wz", glorot(rng, in_dim, hidden))
        self.Uz = p(f"{name}/Uz", glorot(rng, hidden, hidden))
        self.bz = p(f"{name}/bz", np.zeros(hidden))
        self.Wr = p(f"{name}/Wr", glorot(rng, in_dim, hidden))
        self.Ur = p(f"{name}/Ur", glorot(rng, hidden, hidden))
        self.br = p(f"{name}/br", np.zeros(hidden))
        self.Wh = p(f"{name}/Wh", glorot(rng, in_dim, hidden))
        self.Uh = p(f"{name}/Uh", glorot(rng, hidden, hidden))
        self.bh = p(f"{name}/bh", np.zeros(hidden))


def gru_step(h_prev: Tensor, x: Tensor, cell: GruCell) -> Tensor:
    """h' = (1 - z) * h_prev + z * tanh(Wh x + Uh (r * h_prev) + bh)."""
    if x.data.shape[1] != cell.in_dim or h_prev.data.shape[1] != cell.hidden:
        raise ConfigError(
            f"gru_step dims: x {x.data.shape}, h {h_prev.data.shape}, "
            f"cell ({cell.in_dim}, {cell.hidden})"
        )
    z = sigmoid(add(add(matmul(x, cell.Wz), matmul(h_prev, cell.Uz)), cell.bz))
    r = sigmoid(add(add(matmul(x, cell.Wr), matmul(h_prev, cell.Ur)), cell.br))
    h_cand = tanh(add(add(matmul(x, cell.Wh), matmul(mul(r, h_prev), cell.Uh)), cell.bh))
    one_minus_z = sub(const(np.ones_like(z.data)), z)
    return add(mul(one_minus_z, h_prev), mul(z, h_cand))


def unroll_gru(cell: GruCell, inputs: Sequence[Tensor], masks=None,
               batch: int = 1) -> Tensor:
    """Run a GRU over a sequence; returns the final hidden state (B, H).

    ``masks[t]`` is an optional constant (B, 1) array of 0/1; rows with mask 0
    keep their previous hidden state at step t (used to batch histories of
    different lengths, left-padded).
    """
    h = const(np.zeros((batch, cell.hidden)))
    for t, x in enumerate(inputs):
        h_next = gru_step(h, x, cell)
        if masks is not None:
            m = masks[t]
            keep = sub(const(np.ones_like(m.data)), m)
            h = add(mul(m, h_next), mul(keep, h))
        else:
            h = h_next
    return h


class Sgd:
    """Plain gradient descent."""

    def __init__(self, lr: float):
        self.lr = lr

    def step(self, store: ParamStore) -> None:
        for t in store.params.values():
            t.data -= self.lr * t.grad
        store.step_count += 1


class Adam:
    """Adam with bias correction; the package default optimizer."""

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}

    def step(self, store: ParamStore) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for name, p in store.params.items():
            if name not in self._m:
                self._m[name] = np.zeros_like(p.data)
                self._v[name] = np.zeros_like(p.data)
            m = self._m[name]
            v = self._v[name]
            m *= b1
            m += (1 - b1) * p.grad
            v *= b2
            v += (1 - b2) * p.grad * p.grad
            m_hat = m / (1 - b1 ** self.t)
            v_hat = v / (1 - b2 ** self.t)
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
        store.step_count += 1


def make_optimizer(kind: str, lr: float):
    if kind == "adam":
        return Adam(lr)
    if kind == "sgd":
        return Sgd(lr)
    raise ConfigError(f"unknown optimizer {kind!r}")


def sync_target(eval_store: ParamStore, target_store: ParamStore) -> None:
    """Hard copy of evaluation parameters into the target store."""
    target_store.copy_from(eval_store)
