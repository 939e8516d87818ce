"""A small dense-tensor engine with tape-based reverse-mode differentiation.

Operations are recorded on the active :class:`Tape` whenever one of their
inputs requires a gradient::

    w = tensor(np.ones(3), requires_grad=True)
    with Tape() as tape:
        loss = sum_(relu(w))
    grads = tape.backward(loss)
    grads[w]

Outside a tape nothing is recorded. Precision is a process-wide mode
(``"f64"`` for verification, ``"f32"`` for training) and every tensor built
through :func:`tensor` is cast to it.
"""
from __future__ import annotations

import contextlib
import io
import json
import struct
from typing import Callable, Sequence

import numpy as np

from . import kernels

__all__ = [
    "Tensor", "Tape", "ShapeError", "DegenerateNormError",
    "tensor", "set_precision", "get_dtype", "precision", "set_debug",
    "add", "add_channel_bias", "mul", "mul_scalar", "matmul", "relu", "exp", "log",
    "sum_", "mean", "reshape", "transpose", "concat", "index_select",
    "l2_normalize", "logsumexp", "gconv",
    "backward", "finite_diff_grad", "save_tensor", "load_tensor",
    "kink_monitor",
]

_DTYPES = {"f64": np.float64, "f32": np.float32}
_dtype = np.float64
_debug = False
_tapes: list["Tape"] = []
_kink_monitors: list[list] = []


class ShapeError(ValueError):
    def __init__(self, op, a, b):
        super().__init__(f"{op}: incompatible shapes {tuple(a)} and {tuple(b)}")
        self.op, self.shapes = op, (tuple(a), tuple(b))


class DegenerateNormError(ValueError):
    """Raised when normalizing a (near) zero vector in strict mode."""


def set_precision(mode: str) -> None:
    global _dtype
    if mode not in _DTYPES:
        raise ValueError(f"precision must be one of {sorted(_DTYPES)}, got {mode!r}")
    _dtype = _DTYPES[mode]


def get_dtype():
    return _dtype


@contextlib.contextmanager
def precision(mode: str):
    old = _dtype
    set_precision(mode)
    try:
        yield
    finally:
        globals()["_dtype"] = old


def set_debug(flag: bool) -> None:
    """In debug mode every op checks its output for NaN/Inf."""
    global _debug
    _debug = bool(flag)


@contextlib.contextmanager
def kink_monitor():
    """Collect the smallest |input| seen by any relu inside the block."""
    record = [np.inf]
    _kink_monitors.append(record)
    try:
        yield record
    finally:
        _kink_monitors.remove(record)


class Tensor:
    __slots__ = ("data", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = data
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"


def tensor(data, requires_grad: bool = False, name: str | None = None) -> Tensor:
    arr = np.array(data, dtype=_dtype, copy=True)
    return Tensor(arr, requires_grad, name)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else tensor(x)


class Tape:
    """Ordered record of operations; nodes appear after all of their inputs."""

    def __init__(self):
        self.nodes: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def __enter__(self):
        _tapes.append(self)
        return self

    def __exit__(self, *exc):
        _tapes.remove(self)
        return False

    def record(self, out: Tensor, inputs: tuple, vjp: Callable) -> None:
        self.nodes.append((out, inputs, vjp))

    def backward(self, seed: Tensor, wrt: Sequence[Tensor] | None = None) -> dict:
        return backward(self, seed, wrt)


def _emit(data: np.ndarray, inputs: tuple, vjp: Callable) -> Tensor:
    if _debug and not np.all(np.isfinite(data)):
        raise FloatingPointError("non-finite value produced by a forward op")
    needs = any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=needs and bool(_tapes))
    if out.requires_grad:
        _tapes[-1].record(out, inputs, vjp)
    return out


def backward(tape: Tape, seed: Tensor, wrt: Sequence[Tensor] | None = None) -> dict:
    """Reverse sweep from a scalar ``seed``.

    Returns ``{leaf: gradient}``. With ``wrt`` the keys are exactly those
    tensors (zeros where unreached); otherwise every requires-grad leaf that
    feeds a recorded op.
    """
    if seed.data.size != 1:
        raise ShapeError("backward (seed must be scalar)", seed.shape, ())
    produced = {id(out) for out, _, _ in tape.nodes}
    grads: dict[int, np.ndarray] = {id(seed): np.ones_like(seed.data)}
    leaves: dict[int, Tensor] = {}
    for out, inputs, vjp in reversed(tape.nodes):
        for t in inputs:
            if t.requires_grad and id(t) not in produced:
                leaves.setdefault(id(t), t)
        g = grads.pop(id(out), None)
        if g is None:
            continue
        for t, gi in zip(inputs, vjp(g)):
            if gi is None or not t.requires_grad:
                continue
            prev = grads.get(id(t))
            grads[id(t)] = gi if prev is None else prev + gi
    if id(seed) not in produced and seed.requires_grad:
        leaves.setdefault(id(seed), seed)
    keys = list(wrt) if wrt is not None else list(leaves.values())
    return {t: grads.get(id(t), np.zeros_like(t.data)) for t in keys}


# --- elementwise / linear algebra -----------------------------------------

def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    lead = g.ndim - len(shape)
    if lead:
        g = g.sum(axis=tuple(range(lead)))
    return g


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; ``b`` may match a trailing suffix of ``a``'s shape (bias add)."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape and a.shape[a.ndim - b.ndim:] != b.shape:
        raise ShapeError("add", a.shape, b.shape)
    return _emit(a.data + b.data, (a, b), lambda g: (g, _unbroadcast(g, b.shape)))


def add_channel_bias(z: Tensor, b: Tensor) -> Tensor:
    """``z[n, c, g] + b[c]``: one bias per channel, shared over the group axis."""
    if z.ndim != 3 or b.shape != (z.shape[1],):
        raise ShapeError("add_channel_bias", z.shape, b.shape)
    return _emit(z.data + b.data[None, :, None], (z, b), lambda g: (g, g.sum(axis=(0, 2))))


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError("mul", a.shape, b.shape)
    return _emit(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def mul_scalar(a: Tensor, s: float) -> Tensor:
    s = float(s)
    return _emit(a.data * a.data.dtype.type(s), (a,), lambda g: (g * g.dtype.type(s),))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)
    return _emit(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def relu(a: Tensor) -> Tensor:
    if _kink_monitors:
        m = float(np.min(np.abs(a.data))) if a.data.size else np.inf
        for rec in _kink_monitors:
            rec[0] = min(rec[0], m)
    mask = a.data > 0
    return _emit(np.where(mask, a.data, 0).astype(a.data.dtype), (a,), lambda g: (g * mask,))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _emit(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    return _emit(np.log(a.data), (a,), lambda g: (g / a.data,))


def sum_(a: Tensor, axis: int | None = None) -> Tensor:
    out = np.sum(a.data, axis=axis)
    out = np.asarray(out, dtype=a.data.dtype)

    def vjp(g):
        if axis is None:
            return (np.full_like(a.data, g),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)

    return _emit(out, (a,), vjp)


def mean(a: Tensor, axis: int | None = None) -> Tensor:
    n = a.data.size if axis is None else a.shape[axis]
    return mul_scalar(sum_(a, axis), 1.0 / n)


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", a.shape, shape) from None
    return _emit(out, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _emit(np.ascontiguousarray(a.data.transpose(axes)), (a,),
                 lambda g: (np.ascontiguousarray(g.transpose(inv)),))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(tensors)
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(x != y for k, (x, y) in enumerate(zip(t.shape, ref))
                                     if k != axis % len(ref)):
            raise ShapeError("concat", ref, t.shape)
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _emit(np.concatenate([t.data for t in tensors], axis=axis), tensors,
                 lambda g: tuple(np.split(g, sizes, axis=axis)))


def index_select(a: Tensor, axis: int, index) -> Tensor:
    """Gather along ``axis``; indices may repeat (gradients accumulate)."""
    index = np.asarray(index, dtype=np.int64)
    axis = axis % a.ndim
    if index.size and (index.min() < 0 or index.max() >= a.shape[axis]):
        raise IndexError(f"index_select: index out of range for axis of size {a.shape[axis]}")
    out = np.take(a.data, index, axis=axis)

    def vjp(g):
        moved = np.moveaxis(g, axis, 0).reshape(index.size, -1)
        full = np.zeros((a.shape[axis], moved.shape[1]), dtype=g.dtype)
        flat = index.reshape(-1)
        if np.unique(flat).size == flat.size:
            full[flat] = moved
        else:
            np.add.at(full, flat, moved)
        rest = tuple(np.delete(np.array(a.shape), axis))
        return (np.moveaxis(full.reshape((a.shape[axis],) + rest), 0, axis),)

    return _emit(out, (a,), vjp)


# --- composites used by the losses -----------------------------------------

def l2_normalize(v: Tensor, axis: int = -1, eps: float = 1e-12, strict: bool = True) -> Tensor:
    """Scale to unit L2 norm along ``axis``.

    strict: raise :class:`DegenerateNormError` on norms <= eps. Otherwise
    degenerate vectors map to zero (similarity 0 against everything).
    """
    norm = np.sqrt(np.sum(v.data * v.data, axis=axis, keepdims=True))
    bad = norm <= eps
    if strict and bad.any():
        raise DegenerateNormError(f"cannot normalize vector with norm <= {eps}")
    safe = np.where(bad, 1, norm).astype(v.data.dtype)
    u = np.where(bad, 0, v.data / safe).astype(v.data.dtype)

    def vjp(g):
        proj = np.sum(g * u, axis=axis, keepdims=True)
        return (np.where(bad, 0, (g - u * proj) / safe).astype(g.dtype),)

    return _emit(u, (v,), vjp)


def logsumexp(a: Tensor, axis: int = -1) -> Tensor:
    m = np.max(a.data, axis=axis, keepdims=True)
    e = np.exp(a.data - m)
    s = np.sum(e, axis=axis, keepdims=True)
    out = (np.log(s) + m).squeeze(axis)
    soft = e / s
    return _emit(out, (a,), lambda g: (np.expand_dims(g, axis) * soft,))


def gconv(y: Tensor, psi: Tensor, table: np.ndarray, support: np.ndarray) -> Tensor:
    """Group correlation ``z[n, c, g] = sum_i sum_s psi[c, i, support[s]] * y[n, i, table[g, s]]``.

    ``table`` has one column per support element; ``-1`` entries read zero.
    ``psi`` is stored over the full input index set and only its support
    columns enter the product.
    """
    if y.ndim != 3 or psi.ndim != 3 or psi.shape[1] != y.shape[1]:
        raise ShapeError("gconv", y.shape, psi.shape)
    if table.shape[1] != support.size:
        raise ShapeError("gconv (table vs support)", table.shape, support.shape)
    psi_s = np.ascontiguousarray(psi.data[:, :, support])
    yd = np.ascontiguousarray(y.data)
    z = kernels.gconv_forward(yd, psi_s, table)

    def vjp(g):
        g = np.ascontiguousarray(g)
        gy = kernels.gconv_backward_input(g, psi_s, table, y.shape[2]) if y.requires_grad else None
        gpsi = None
        if psi.requires_grad:
            gpsi = np.zeros_like(psi.data)
            gpsi[:, :, support] = kernels.gconv_backward_filter(g, yd, table)
        return gy, gpsi

    return _emit(z, (y, psi), vjp)


# --- verification oracle ----------------------------------------------------

def finite_diff_grad(scalar_fn: Callable[[np.ndarray], float], point, step: float = 1e-6) -> np.ndarray:
    """Central differences ``(f(x + h e_i) - f(x - h e_i)) / 2h`` for every coordinate."""
    if step <= 0:
        raise ValueError("step must be positive")
    x = np.array(point.data if isinstance(point, Tensor) else point, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = float(scalar_fn(x))
        flat[i] = orig - step
        fm = float(scalar_fn(x))
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * step)
    return grad


# --- serialization ------------------------------------------------------------

def save_tensor(fp, t) -> None:
    """Write ``uint32 header length | JSON {shape, dtype} | little-endian data``."""
    arr = np.asarray(t.data if isinstance(t, Tensor) else t)
    le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
    header = json.dumps({"shape": list(arr.shape), "dtype": le.dtype.str},
                        sort_keys=True).encode()
    blob = struct.pack("<I", len(header)) + header + np.ascontiguousarray(le).tobytes()
    if isinstance(fp, (str, bytes)) or hasattr(fp, "__fspath__"):
        with open(fp, "wb") as f:
            f.write(blob)
    else:
        fp.write(blob)


def load_tensor(fp, requires_grad: bool = False) -> Tensor:
    if isinstance(fp, (str, bytes)) or hasattr(fp, "__fspath__"):
        with open(fp, "rb") as f:
            raw = f.read()
    else:
        raw = fp.read()
    buf = io.BytesIO(raw)
    (n,) = struct.unpack("<I", buf.read(4))
    header = json.loads(buf.read(n))
    dtype = np.dtype(header["dtype"])
    shape = tuple(header["shape"])
    data = np.frombuffer(buf.read(), dtype=dtype)
    if data.size != int(np.prod(shape, dtype=np.int64)):
        raise ValueError("tensor blob length does not match header shape")
    return Tensor(data.reshape(shape).astype(dtype.newbyteorder("="), copy=True), requires_grad)
