"""Tape-based reverse-mode automatic differentiation over dense float64 arrays.

Every loss in the library is built from the primitives in this module and
differentiated by a single reverse sweep over a :class:`Tape`.  The design is
deliberately small:

* a :class:`Tensor` is an immutable float64 ndarray plus (optionally) the id of
  the node that produced it on a tape; tensors without a tape are constants and
  never receive gradients,
* a :class:`Tape` is an append-only, topologically ordered list of recorded
  operations, each carrying its input node ids, output node id and a local
  gradient rule,
* :func:`backward` walks the tape once in reverse and returns gradients for
  the registered leaf nodes only.

Branching losses (argmax / max selections) are recorded dynamically, so the
tape always reflects the branch actually taken.  Limited numpy broadcasting is
supported for elementwise operations; gradients are summed back over the
broadcast axes.  There is no GPU path and no higher-order differentiation.
"""

from __future__ import annotations

import struct
import zlib

import numpy as np

from .errors import ConfigError, TrainingError, UsageError

__all__ = [
    "Tensor", "Tape", "Mlp", "AdamState",
    "constant", "as_tensor", "add", "sub", "mul", "div", "neg", "exp", "log", "sqrt",
    "square", "tanh", "relu", "softplus", "softmax", "logsumexp",
    "tsum", "tmean", "tmax", "minimum", "clip", "matmul", "concat",
    "reshape", "detach", "forward", "backward", "grads_by_name", "adam_step",
    "save_arrays", "load_arrays", "init_rng",
]


class Tensor:
    """A dense float64 array, optionally attached to a tape node."""

    __slots__ = ("data", "tape", "nid")

    def __init__(self, data, tape=None, nid=None):
        self.data = data
        self.tape = tape
        self.nid = nid

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self):
        return float(self.data)

    def __repr__(self):
        tag = "const" if self.tape is None else f"node {self.nid}"
        return f"Tensor(shape={self.data.shape}, {tag})"

    # Arithmetic sugar; scalars and ndarrays are lifted to constants.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)


def constant(value) -> Tensor:
    """Wrap a value as a tape-less constant tensor."""
    return Tensor(np.asarray(value, dtype=np.float64))


def as_tensor(value) -> Tensor:
    """Pass tensors through; wrap anything else as a constant."""
    if isinstance(value, Tensor):
        return value
    return constant(value)


_lift = as_tensor


class Tape:
    """Ordered record of primitive operations for one reverse sweep.

    Nodes are numbered in the order they are created, which makes the record
    topologically ordered by construction.  A tape is confined to a single
    thread and is consumed by :func:`backward`.
    """

    def __init__(self):
        self.ops = []            # (out_nid, in_nids tuple, backward_rule)
        self.leaves = {}         # nid -> name
        self._leaf_cache = {}    # id(array) -> nid
        self._n = 0
        self.consumed = False

    def _new_node(self) -> int:
        nid = self._n
        self._n += 1
        return nid

    def leaf(self, array, name=None) -> Tensor:
        """Register a parameter array as a leaf node (cached per array object)."""
        if self.consumed:
            raise UsageError("tape already consumed by backward()")
        key = id(array)
        nid = self._leaf_cache.get(key)
        if nid is None:
            nid = self._new_node()
            self._leaf_cache[key] = nid
            self.leaves[nid] = name
        return Tensor(array, self, nid)

    def leaf_nid(self, array):
        """Node id previously assigned to this array by leaf(), or None."""
        return self._leaf_cache.get(id(array))

    def record(self, value, in_nids, rule) -> Tensor:
        if self.consumed:
            raise UsageError("tape already consumed by backward()")
        nid = self._new_node()
        self.ops.append((nid, in_nids, rule))
        return Tensor(value, self, nid)

    def __len__(self):
        return len(self.ops)


def _find_tape(tensors):
    tape = None
    for t in tensors:
        if t.tape is not None:
            if tape is None:
                tape = t.tape
            elif tape is not t.tape:
                raise UsageError("operation mixes tensors from two different tapes")
    return tape


def _emit(tensors, value, rule) -> Tensor:
    """Record an op if any input is attached to a tape, else stay eager."""
    tape = _find_tape(tensors)
    if tape is None:
        return Tensor(value)
    in_nids = tuple(t.nid if t.tape is not None else None for t in tensors)
    return tape.record(value, in_nids, rule)


def _unbroadcast(grad, shape):
    """Sum a gradient back to the shape of a broadcast operand."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# Elementwise primitives
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    out = a.data + b.data

    def rule(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _emit((a, b), out, rule)


def sub(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    out = a.data - b.data

    def rule(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _emit((a, b), out, rule)


def mul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    out = a.data * b.data

    def rule(g):
        return (_unbroadcast(g * b.data, a.data.shape),
                _unbroadcast(g * a.data, b.data.shape))

    return _emit((a, b), out, rule)


def div(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    out = a.data / b.data

    def rule(g):
        return (_unbroadcast(g / b.data, a.data.shape),
                _unbroadcast(-g * out / b.data, b.data.shape))

    return _emit((a, b), out, rule)


def neg(a) -> Tensor:
    a = _lift(a)
    return _emit((a,), -a.data, lambda g: (-g,))


def exp(a) -> Tensor:
    a = _lift(a)
    out = np.exp(a.data)
    return _emit((a,), out, lambda g: (g * out,))


def log(a) -> Tensor:
    a = _lift(a)
    return _emit((a,), np.log(a.data), lambda g: (g / a.data,))


def sqrt(a) -> Tensor:
    a = _lift(a)
    out = np.sqrt(a.data)
    return _emit((a,), out, lambda g: (g / (2.0 * out),))


def square(a) -> Tensor:
    a = _lift(a)
    return _emit((a,), a.data * a.data, lambda g: (2.0 * a.data * g,))


def tanh(a) -> Tensor:
    a = _lift(a)
    out = np.tanh(a.data)
    return _emit((a,), out, lambda g: (g * (1.0 - out * out),))


def relu(a) -> Tensor:
    a = _lift(a)
    out = np.maximum(a.data, 0.0)
    return _emit((a,), out, lambda g: (g * (a.data > 0.0),))


def softplus(a) -> Tensor:
    # log(1 + e^x), computed without overflow for large |x|
    a = _lift(a)
    x = a.data
    out = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))

    def rule(g):
        return (g / (1.0 + np.exp(-x)),)

    return _emit((a,), out, rule)


def clip(a, low, high) -> Tensor:
    """Clamp values; gradient passes only where the input is inside the range."""
    a = _lift(a)
    out = np.clip(a.data, low, high)

    def rule(g):
        return (g * ((a.data >= low) & (a.data <= high)),)

    return _emit((a,), out, rule)


def minimum(a, b) -> Tensor:
    """Elementwise min; gradient routes to the smaller operand (ties to the first)."""
    a, b = _lift(a), _lift(b)
    take_a = a.data <= b.data
    out = np.where(take_a, a.data, b.data)

    def rule(g):
        return (_unbroadcast(g * take_a, a.data.shape),
                _unbroadcast(g * ~take_a, b.data.shape))

    return _emit((a, b), out, rule)


# ---------------------------------------------------------------------------
# Reductions and row-wise transforms
# ---------------------------------------------------------------------------

def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = _lift(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def rule(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.data.shape).copy(),)

    return _emit((a,), out, rule)


def tmean(a, axis=None) -> Tensor:
    a = _lift(a)
    out = a.data.mean(axis=axis)
    n = a.data.size if axis is None else a.data.shape[axis]

    def rule(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, a.data.shape).copy(),)

    return _emit((a,), out, rule)


def tmax(a, axis) -> Tensor:
    """Max along an axis; gradient routes to the first (lowest-index) maximiser."""
    a = _lift(a)
    idx = np.argmax(a.data, axis=axis)
    out = np.take_along_axis(a.data, np.expand_dims(idx, axis), axis=axis).squeeze(axis)

    def rule(g):
        ga = np.zeros_like(a.data)
        np.put_along_axis(ga, np.expand_dims(idx, axis),
                          np.expand_dims(g, axis), axis=axis)
        return (ga,)

    return _emit((a,), out, rule)


def softmax(a, axis=-1) -> Tensor:
    a = _lift(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def rule(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - dot),)

    return _emit((a,), out, rule)


def logsumexp(a, axis=-1, keepdims=False) -> Tensor:
    a = _lift(a)
    m = a.data.max(axis=axis, keepdims=True)
    e = np.exp(a.data - m)
    s = e.sum(axis=axis, keepdims=True)
    out = m + np.log(s)
    if not keepdims:
        out = out.squeeze(axis)

    def rule(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (g * (e / s),)

    return _emit((a,), out, rule)


# ---------------------------------------------------------------------------
# Shape and linear-algebra primitives
# ---------------------------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ConfigError(f"matmul expects 2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ConfigError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def rule(g):
        return g @ b.data.T, a.data.T @ g

    return _emit((a, b), out, rule)


def concat(tensors, axis=-1) -> Tensor:
    tensors = [_lift(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def rule(g):
        return tuple(np.split(g, splits, axis=axis))

    return _emit(tuple(tensors), out, rule)


def reshape(a, shape) -> Tensor:
    a = _lift(a)
    out = a.data.reshape(shape)

    def rule(g):
        return (g.reshape(a.data.shape),)

    return _emit((a,), out, rule)


def detach(a) -> Tensor:
    """Cut the tensor loose from its tape: identity value, zero gradient.

    The result is a constant, so the tape holds no edge through it at all:
    gradient-opacity is structural, not just numerically zero.
    """
    a = _lift(a)
    return Tensor(a.data)


# ---------------------------------------------------------------------------
# Backward sweep
# ---------------------------------------------------------------------------

def backward(tape: Tape, loss: Tensor) -> dict:
    """Reverse sweep from a scalar loss; returns {leaf nid: gradient array}.

    The tape is consumed: recording or sweeping it again raises UsageError.
    """
    if loss.tape is not tape:
        raise UsageError("loss tensor does not belong to this tape")
    if tape.consumed:
        raise UsageError("tape already consumed by backward()")
    if loss.data.size != 1:
        raise UsageError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    tape.consumed = True

    grads = {loss.nid: np.ones_like(loss.data)}
    for out_nid, in_nids, rule in reversed(tape.ops):
        g = grads.pop(out_nid, None)
        if g is None:
            continue
        for nid, gin in zip(in_nids, rule(g)):
            if nid is None or gin is None:
                continue
            acc = grads.get(nid)
            grads[nid] = gin if acc is None else acc + gin
    return {nid: g for nid, g in grads.items() if nid in tape.leaves}


def grads_by_name(tape: Tape, grads: dict, arrays: dict) -> dict:
    """Re-key a backward() result by parameter name for a named array dict.

    Parameters that never touched the tape (or received no gradient) are
    simply absent; adam_step treats missing entries as zero.
    """
    out = {}
    for name, arr in arrays.items():
        nid = tape.leaf_nid(arr)
        if nid is not None and nid in grads:
            out[name] = grads[nid]
    return out


# ---------------------------------------------------------------------------
# MLP layers
# ---------------------------------------------------------------------------

_ACTIVATIONS = {"relu": relu, "tanh": tanh, "softmax": softmax, "identity": lambda t: t}


def init_rng(seed: int, name: str) -> np.random.Generator:
    """A generator keyed by (seed, name) so adding nets never shifts others' init."""
    return np.random.default_rng(np.random.SeedSequence([seed, zlib.crc32(name.encode())]))


class Mlp:
    """Fully connected layer stack: list of (weights, bias, activation tag).

    Weights are float64 ndarrays owned by the Mlp; adjacent layer dimensions
    must agree and the parameter count is fixed after construction.
    """

    def __init__(self, layers, name="mlp"):
        self.name = name
        self.layers = []
        prev_out = None
        for w, b, act in layers:
            if act not in _ACTIVATIONS:
                raise ConfigError(f"unknown activation {act!r}")
            w = np.asarray(w, dtype=np.float64)
            b = np.asarray(b, dtype=np.float64)
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ConfigError(f"bad layer shapes w={w.shape} b={b.shape}")
            if prev_out is not None and w.shape[0] != prev_out:
                raise ConfigError(
                    f"layer input {w.shape[0]} does not match previous output {prev_out}")
            prev_out = w.shape[1]
            self.layers.append((w, b, act))

    @classmethod
    def build(cls, sizes, activations, rng, name="mlp"):
        """Create with uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases."""
        if len(activations) != len(sizes) - 1:
            raise ConfigError("need one activation per layer")
        layers = []
        for fan_in, fan_out, act in zip(sizes[:-1], sizes[1:], activations):
            bound = 1.0 / np.sqrt(fan_in)
            w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
            layers.append((w, np.zeros(fan_out), act))
        return cls(layers, name=name)

    @property
    def in_dim(self):
        return self.layers[0][0].shape[0]

    @property
    def out_dim(self):
        return self.layers[-1][0].shape[1]

    def arrays(self) -> dict:
        out = {}
        for i, (w, b, _) in enumerate(self.layers):
            out[f"{self.name}.w{i}"] = w
            out[f"{self.name}.b{i}"] = b
        return out

    def load_arrays(self, arrays: dict):
        for i, (w, b, _) in enumerate(self.layers):
            w[...] = arrays[f"{self.name}.w{i}"]
            b[...] = arrays[f"{self.name}.b{i}"]

    def copy(self, name=None):
        return Mlp([(w.copy(), b.copy(), act) for w, b, act in self.layers],
                   name=name or self.name)


def forward(mlp: Mlp, x, tape: Tape | None, frozen=False) -> Tensor:
    """Run the MLP, recording every intermediate on the tape (eager if tape is None).

    With frozen=True the parameters enter as constants: gradients still flow
    through the input x, but never into the MLP's own weights.
    """
    x = _lift(x)
    single = x.ndim == 1
    if single:
        x = reshape(x, (1, x.shape[0]))
    if x.shape[1] != mlp.in_dim:
        raise ConfigError(f"input dim {x.shape[1]} != first-layer dim {mlp.in_dim}")
    as_param = tape.leaf if (tape is not None and not frozen) else constant
    h = x
    for w, b, act in mlp.layers:
        h = _ACTIVATIONS[act](add(matmul(h, as_param(w)), as_param(b)))
    if single:
        h = reshape(h, (h.shape[1],))
    return h


# ---------------------------------------------------------------------------
# Adam optimizer
# ---------------------------------------------------------------------------

class AdamState:
    """First/second moment accumulators plus step counter for one parameter group."""

    def __init__(self, params: dict, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}


def adam_step(params: dict, grads: dict, state: AdamState) -> dict:
    """One Adam update with bias correction; arrays are updated in place.

    Missing gradients count as zero (moments still decay).  A non-finite
    gradient aborts with the offending parameter name.
    """
    state.t += 1
    c1 = 1.0 - state.beta1 ** state.t
    c2 = 1.0 - state.beta2 ** state.t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = 0.0
        elif not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for parameter {name!r}",
                                {"parameter": name})
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params


# ---------------------------------------------------------------------------
# Parameter checkpoints
# ---------------------------------------------------------------------------

_CHECKPOINT_MAGIC = b"PMCK"
_CHECKPOINT_VERSION = 1


def save_arrays(path, arrays: dict):
    """Write named float64 arrays to a versioned binary container (bit-exact)."""
    with open(path, "wb") as f:
        f.write(_CHECKPOINT_MAGIC)
        f.write(struct.pack("<II", _CHECKPOINT_VERSION, len(arrays)))
        for name in sorted(arrays):
            arr = np.asarray(arrays[name], dtype=np.float64)
            encoded = name.encode("utf-8")
            f.write(struct.pack("<H", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<B", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            f.write(arr.tobytes())


def load_arrays(path) -> dict:
    with open(path, "rb") as f:
        if f.read(4) != _CHECKPOINT_MAGIC:
            raise UsageError(f"{path}: not a parameter checkpoint")
        version, count = struct.unpack("<II", f.read(8))
        if version != _CHECKPOINT_VERSION:
            raise UsageError(f"{path}: unsupported checkpoint version {version}")
        out = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", f.read(2))
            name = f.read(name_len).decode("utf-8")
            (ndim,) = struct.unpack("<B", f.read(1))
            shape = struct.unpack(f"<{ndim}Q", f.read(8 * ndim)) if ndim else ()
            n = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(f.read(8 * n), dtype=np.float64).reshape(shape)
            out[name] = data.copy()
        return out
