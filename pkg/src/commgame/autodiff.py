"""Reverse-mode automatic differentiation over dense float64 arrays.

A computation is a DAG of `Node`s. Each non-leaf node carries a backward
rule mapping the gradient at its output to gradients at its parents.
Everything is 64-bit and single-threaded; tensors are 0-d scalars, 1-d
vectors, or 2-d matrices.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ConfigError, ContractError, NumericError, ShapeError

Array = np.ndarray

BLOB_MAGIC = b"CGPB"
BLOB_VERSION = 1


class Node:
    """One vertex of the computation graph.

    `value` is an immutable-by-convention float64 array. `parents` and
    `backward_rule` are empty/None for leaves; for interior nodes the rule
    maps the output gradient to a tuple of parent gradients (None entries
    mean "no gradient flows to this parent").
    """

    __slots__ = ("value", "parents", "backward_rule", "name")

    def __init__(
        self,
        value,
        parents: tuple["Node", ...] = (),
        backward_rule: Callable[[Array], tuple] | None = None,
        name: str | None = None,
    ):
        self.value = np.asarray(value, dtype=np.float64)
        self.parents = parents
        self.backward_rule = backward_rule
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        tag = self.name or ("leaf" if not self.parents else "op")
        return f"Node({tag}, shape={self.value.shape})"


def leaf(value, name: str | None = None) -> Node:
    return Node(value, name=name)


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Sum `grad` down to `shape`, inverting numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def add(a: Node, b: Node) -> Node:
    value = a.value + b.value

    def rule(g):
        return _unbroadcast(g, a.value.shape), _unbroadcast(g, b.value.shape)

    return Node(value, (a, b), rule)


def sub(a: Node, b: Node) -> Node:
    value = a.value - b.value

    def rule(g):
        return _unbroadcast(g, a.value.shape), _unbroadcast(-g, b.value.shape)

    return Node(value, (a, b), rule)


def mul(a: Node, b: Node) -> Node:
    value = a.value * b.value

    def rule(g):
        return (
            _unbroadcast(g * b.value, a.value.shape),
            _unbroadcast(g * a.value, b.value.shape),
        )

    return Node(value, (a, b), rule)


def scale(a: Node, c: float) -> Node:
    c = float(c)
    return Node(a.value * c, (a,), lambda g: (g * c,))


def matmul(a: Node, b: Node) -> Node:
    if a.value.ndim != 2 or b.value.ndim != 2 or a.value.shape[1] != b.value.shape[0]:
        raise ShapeError(
            f"matmul: incompatible shapes {a.value.shape} and {b.value.shape}"
        )
    value = a.value @ b.value

    def rule(g):
        return g @ b.value.T, a.value.T @ g

    return Node(value, (a, b), rule)


def tanh(a: Node) -> Node:
    t = np.tanh(a.value)
    return Node(t, (a,), lambda g: (g * (1.0 - t * t),))


def sigmoid(a: Node) -> Node:
    s = 1.0 / (1.0 + np.exp(-a.value))
    return Node(s, (a,), lambda g: (g * s * (1.0 - s),))


def sum_all(a: Node) -> Node:
    shape = a.value.shape
    return Node(a.value.sum(), (a,), lambda g: (np.full(shape, float(g)),))


def mean_rows(a: Node) -> Node:
    """Column means of a 2-d array; returns a (1, d) row."""
    n = a.value.shape[0]
    value = a.value.mean(axis=0, keepdims=True)
    return Node(value, (a,), lambda g: (np.repeat(g, n, axis=0) / n,))


def transpose(a: Node) -> Node:
    return Node(a.value.T, (a,), lambda g: (g.T,))


def stack_rows(rows: Sequence[Node]) -> Node:
    """Stack (1, d) rows into a (T, d) matrix."""
    value = np.vstack([r.value for r in rows])

    def rule(g):
        return tuple(g[i : i + 1, :] for i in range(len(rows)))

    return Node(value, tuple(rows), rule)


def concat_cols(a: Node, b: Node) -> Node:
    if a.value.shape[0] != b.value.shape[0]:
        raise ShapeError(
            f"concat_cols: row counts differ {a.value.shape} vs {b.value.shape}"
        )
    da = a.value.shape[1]
    value = np.hstack([a.value, b.value])
    return Node(value, (a, b), lambda g: (g[:, :da], g[:, da:]))


def take_rows(a: Node, indices: Sequence[int]) -> Node:
    """Gather rows of a matrix; backward scatter-adds into the source."""
    idx = np.asarray(indices, dtype=np.int64)
    value = a.value[idx]

    def rule(g):
        out = np.zeros_like(a.value)
        np.add.at(out, idx, g)
        return (out,)

    return Node(value, (a,), rule)


def squared_distance(a: Node, b: Node) -> Node:
    """Scalar ||a - b||^2."""
    d = a.value - b.value
    value = np.asarray((d * d).sum())

    def rule(g):
        return 2.0 * float(g) * d, -2.0 * float(g) * d

    return Node(value, (a, b), rule)


def cross_entropy_logits(logits: Node, label: int) -> Node:
    """Scalar -log softmax(logits)[label] for a (1, C) logits row."""
    z = logits.value.reshape(-1)
    if not np.all(np.isfinite(z)):
        raise NumericError("non-finite logits in cross entropy")
    zmax = z.max()
    expz = np.exp(z - zmax)
    p = expz / expz.sum()
    value = np.asarray(-(z[label] - zmax - np.log(expz.sum())))

    def rule(g):
        grad = p.copy()
        grad[label] -= 1.0
        return (float(g) * grad.reshape(logits.value.shape),)

    return Node(value, (logits,), rule)


@dataclass
class LstmParams:
    """Packed LSTM cell parameters; gate order along columns is i, f, g, o."""

    wx: Node  # (d, 4h)
    wh: Node  # (h, 4h)
    b: Node  # (1, 4h)

    @property
    def hidden(self) -> int:
        return self.wh.value.shape[0]


def lstm_cell(
    x: Node, h_prev: Node, c_prev: Node, params: LstmParams, step: int | None = None
) -> tuple[Node, Node]:
    """Single LSTM step on (1, d) input and (1, h) state rows.

    Returns (h_t, c_t) as two graph nodes sharing one cached forward
    computation; gradients arriving through either output are summed by
    the generic accumulation in `backward`.
    """
    h = params.hidden
    d = x.value.shape[1]
    if params.wx.value.shape != (d, 4 * h) or params.wh.value.shape != (h, 4 * h):
        raise ShapeError(
            f"lstm_cell: params expect input {params.wx.value.shape[0]}, "
            f"hidden {h}; got input {d}, state {h_prev.value.shape}"
        )
    z = x.value @ params.wx.value + h_prev.value @ params.wh.value + params.b.value
    gi = 1.0 / (1.0 + np.exp(-z[:, 0:h]))
    gf = 1.0 / (1.0 + np.exp(-z[:, h : 2 * h]))
    gg = np.tanh(z[:, 2 * h : 3 * h])
    go = 1.0 / (1.0 + np.exp(-z[:, 3 * h :]))
    c_t = gf * c_prev.value + gi * gg
    tc = np.tanh(c_t)
    h_t = go * tc
    if not (np.all(np.isfinite(h_t)) and np.all(np.isfinite(c_t))):
        raise NumericError(f"non-finite LSTM activation at step {step}")

    xv, hv, cv = x.value, h_prev.value, c_prev.value

    def to_parents(dc: Array, do: Array):
        di = dc * gg
        df = dc * cv
        dg = dc * gi
        dc_prev = dc * gf
        dz = np.hstack(
            [
                di * gi * (1.0 - gi),
                df * gf * (1.0 - gf),
                dg * (1.0 - gg * gg),
                do * go * (1.0 - go),
            ]
        )
        dx = dz @ params.wx.value.T
        dh_prev = dz @ params.wh.value.T
        dwx = xv.T @ dz
        dwh = hv.T @ dz
        db = dz.sum(axis=0, keepdims=True)
        return dx, dh_prev, dc_prev, dwx, dwh, db

    def h_rule(g):
        do = g * tc
        dc = g * go * (1.0 - tc * tc)
        return to_parents(dc, do)

    def c_rule(g):
        return to_parents(g, np.zeros_like(g))

    parents = (x, h_prev, c_prev, params.wx, params.wh, params.b)
    return Node(h_t, parents, h_rule), Node(c_t, parents, c_rule)


def _toposort(root: Node) -> list[Node]:
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
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Node) -> dict[Node, Array]:
    """Gradient of a scalar loss with respect to every reachable node.

    A node used along multiple paths receives the sum of all path
    gradients. Nodes not reachable from `loss` are absent from the map;
    use `grads_for` to fill zeros for a known parameter set.
    """
    if loss.value.size != 1:
        raise ContractError(f"backward root must be scalar, got shape {loss.value.shape}")
    grads: dict[int, Array] = {id(loss): np.ones_like(loss.value)}
    by_id: dict[int, Node] = {id(loss): loss}
    for node in reversed(_toposort(loss)):
        g = grads.get(id(node))
        if g is None or node.backward_rule is None:
            continue
        parent_grads = node.backward_rule(g)
        for parent, pg in zip(node.parents, parent_grads):
            if pg is None:
                continue
            pid = id(parent)
            by_id[pid] = parent
            if pid in grads:
                grads[pid] = grads[pid] + pg
            else:
                grads[pid] = pg
    return {by_id[i]: g for i, g in grads.items()}


def grads_for(loss: Node, params: dict[str, Node]) -> dict[str, Array]:
    """Named gradients for a parameter dict; unreached entries get zeros."""
    g = backward(loss)
    return {
        name: g.get(node, np.zeros_like(node.value)) for name, node in params.items()
    }


@dataclass
class AdamWState:
    """First/second moment accumulators keyed by parameter name."""

    step: int = 0
    m: dict[str, Array] = field(default_factory=dict)
    v: dict[str, Array] = field(default_factory=dict)


def adamw_step(
    params: dict[str, Node],
    grads: dict[str, Array],
    state: AdamWState,
    lr: float = 1e-3,
    weight_decay: float = 0.0,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> None:
    """One AdamW update in place: bias-corrected Adam step, then decoupled
    decay p <- p - lr*wd*p."""
    if lr < 0:
        raise ConfigError(f"learning rate must be nonnegative, got {lr}")
    if weight_decay < 0:
        raise ConfigError(f"weight decay must be nonnegative, got {weight_decay}")
    b1, b2 = betas
    state.step += 1
    t = state.step
    for name, node in params.items():
        g = grads.get(name)
        if g is None:
            continue
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(node.value)
            state.m[name] = m
            state.v[name] = np.zeros_like(node.value)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        mhat = m / (1.0 - b1**t)
        vhat = v / (1.0 - b2**t)
        node.value = node.value - lr * mhat / (np.sqrt(vhat) + eps)
        if weight_decay:
            node.value = node.value - lr * weight_decay * node.value


def save_tensor_blob(
    path_or_buf, tensors: dict[str, Array], manifest_extra: dict | None = None
) -> None:
    """Write named float64 arrays as one binary blob.

    Layout: b"CGPB", uint32 LE version, uint64 LE manifest length, UTF-8
    JSON manifest, then each tensor's raw little-endian float64 payload in
    manifest order (C order).
    """
    entries = []
    offset = 0
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype=np.float64)
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size * 8
    manifest = {"tensors": entries}
    if manifest_extra:
        manifest.update(manifest_extra)
    payload = json.dumps(manifest, sort_keys=True).encode("utf-8")
    own = isinstance(path_or_buf, (str, bytes))
    f = open(path_or_buf, "wb") if own else path_or_buf
    try:
        f.write(BLOB_MAGIC)
        f.write(struct.pack("<I", BLOB_VERSION))
        f.write(struct.pack("<Q", len(payload)))
        f.write(payload)
        for name, arr in tensors.items():
            f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    finally:
        if own:
            f.close()


def load_tensor_blob(path_or_buf) -> tuple[dict[str, Array], dict]:
    """Inverse of `save_tensor_blob`; returns (tensors, manifest)."""
    own = isinstance(path_or_buf, (str, bytes))
    f = open(path_or_buf, "rb") if own else path_or_buf
    try:
        magic = f.read(4)
        if magic != BLOB_MAGIC:
            raise ContractError(f"bad parameter blob magic {magic!r}")
        (version,) = struct.unpack("<I", f.read(4))
        if version != BLOB_VERSION:
            raise ContractError(f"unsupported parameter blob version {version}")
        (mlen,) = struct.unpack("<Q", f.read(8))
        manifest = json.loads(f.read(mlen).decode("utf-8"))
        tensors: dict[str, Array] = {}
        for entry in manifest["tensors"]:
            shape = tuple(entry["shape"])
            n = int(np.prod(shape)) if shape else 1
            raw = f.read(n * 8)
            tensors[entry["name"]] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
        return tensors, manifest
    finally:
        if own:
            f.close()


def blob_bytes(tensors: dict[str, Array], manifest_extra: dict | None = None) -> bytes:
    buf = io.BytesIO()
    save_tensor_blob(buf, tensors, manifest_extra)
    return buf.getvalue()
