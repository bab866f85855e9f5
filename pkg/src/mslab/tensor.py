"""Tape-based reverse-mode autodiff over dense float64 arrays.

A `Recording` is a Wengert list: every differentiable operation appends
one node holding the data needed for its backward rule. `backward()`
walks the list once in reverse node-id order, so gradient accumulation
over fan-out is an ordinary sum with a fixed, reproducible order.

Only first-order gradients are supported: backward passes run outside
any recording and produce plain arrays, never new tape nodes.
"""

import threading

import numpy as np

from . import kernels
from .errors import ContractError, DegenerateBatchError, LabelError, ShapeError

_tls = threading.local()


def _stack():
    s = getattr(_tls, "recordings", None)
    if s is None:
        s = _tls.recordings = []
    return s


def _active():
    s = _stack()
    return s[-1] if s else None


class Tensor:
    """Dense n-d float64 array, optionally tracked by the active Recording.

    `values` is the row-major flat view of `data`; `node_id` is set when
    the tensor is a recorded result, leaf tensors are tracked by the
    recording itself.
    """

    __slots__ = ("data", "requires_grad", "node_id", "_rec")

    def __init__(self, data, requires_grad=False):
        arr = np.asarray(data, dtype=np.float64)
        if not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)
        if any(d <= 0 for d in arr.shape):
            raise ShapeError(f"tensor dimensions must be positive, got {arr.shape}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.node_id = None
        self._rec = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def values(self):
        return self.data.reshape(-1)

    def item(self):
        if self.data.size != 1:
            raise ContractError(f"item() needs a scalar, got shape {self.data.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(shape={tuple(self.data.shape)}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


class Recording:
    """Append-only tape of operations; one per loss evaluation.

    Confined to a single thread. Use as a context manager:

        with Recording():
            loss = model_loss(params, batch)
        grads = backward(loss)
    """

    __slots__ = ("nodes", "leaf_ids", "leaf_refs")

    def __init__(self):
        self.nodes = []  # (backward_fn, input_ids, ctx); leaves have fn None
        self.leaf_ids = {}  # id(tensor) -> node id
        self.leaf_refs = []  # keep leaves alive so id() stays unique

    def __enter__(self):
        _stack().append(self)
        return self

    def __exit__(self, *exc):
        popped = _stack().pop()
        assert popped is self
        return False

    def _register_leaf(self, t):
        nid = self.leaf_ids.get(id(t))
        if nid is None:
            nid = len(self.nodes)
            self.nodes.append((None, (), None))
            self.leaf_ids[id(t)] = nid
            self.leaf_refs.append(t)
        return nid

    def _input_id(self, t):
        """Node id of `t` in this recording, or None for constants."""
        if t._rec is self and t.node_id is not None:
            return t.node_id
        nid = self.leaf_ids.get(id(t))
        if nid is not None:
            return nid
        if t.requires_grad:
            return self._register_leaf(t)
        return None


class GradStore:
    """Mapping from node id (or name, for meta-level stores) to gradient."""

    __slots__ = ("_g", "_rec")

    def __init__(self, rec=None):
        self._g = {}
        self._rec = rec

    def put(self, key, arr):
        old = self._g.get(key)
        if old is not None and old.shape != arr.shape:
            raise ShapeError(f"gradient shape {arr.shape} != stored {old.shape} for {key!r}")
        self._g[key] = arr

    def add(self, key, arr):
        old = self._g.get(key)
        self._g[key] = arr if old is None else old + arr

    def get(self, key, default=None):
        return self._g.get(key, default)

    def wrt(self, t):
        """Gradient array for a leaf tensor of the backing recording."""
        if self._rec is None:
            raise ContractError("this GradStore is not backed by a recording")
        nid = self._rec.leaf_ids.get(id(t))
        if nid is None and t._rec is self._rec:
            nid = t.node_id
        return self._g.get(nid)

    def by_name(self, params):
        """name -> gradient for a ParamSet, zeros where a leaf was unused."""
        out = {}
        for name, t in params.items():
            g = self.wrt(t)
            out[name] = np.zeros_like(t.data) if g is None else g
        return out

    def __getitem__(self, key):
        return self._g[key]

    def __contains__(self, key):
        return key in self._g

    def __len__(self):
        return len(self._g)

    def keys(self):
        return self._g.keys()

    def items(self):
        return self._g.items()


def _record(out_data, requires, backward_fn, inputs, ctx):
    """Wrap `out_data`; append a node when a recording is active."""
    out = Tensor.__new__(Tensor)
    out.data = out_data
    out.node_id = None
    out._rec = None
    rec = _active()
    if rec is None or not requires:
        out.requires_grad = False
        return out
    input_ids = tuple(None if t is None else rec._input_id(t) for t in inputs)
    out.requires_grad = True
    out.node_id = len(rec.nodes)
    out._rec = rec
    rec.nodes.append((backward_fn, input_ids, ctx))
    return out


# ---------------------------------------------------------------------------
# elementwise operations


def _bwd_add(ctx, g):
    return g, g


def _bwd_add_scalar(ctx, g):
    return g, g.sum().reshape(ctx)


def _bwd_sub(ctx, g):
    return g, -g


def _bwd_mul(ctx, g):
    a, b = ctx
    return g * b, g * a


def _bwd_mul_scalar(ctx, g):
    a, b, b_shape = ctx
    return g * b, (g * a).sum().reshape(b_shape)


def _bwd_scale(ctx, g):
    return (g * ctx,)


def _bwd_relu(ctx, g):
    return (g * (ctx > 0.0),)


def _bwd_tanh(ctx, g):
    return (g * (1.0 - ctx * ctx),)


def _binary_data(a, b, op_name):
    """Resolve the rhs of a binary op: equal-shape tensor or scalar."""
    if isinstance(b, Tensor):
        if b.data.size == 1 and b.data.shape != a.data.shape:
            return b, b.data.reshape(()), True
        if b.data.shape != a.data.shape:
            raise ShapeError(f"{op_name}: shape {a.data.shape} vs {b.data.shape}")
        return b, b.data, False
    if np.ndim(b) == 0:
        return None, float(b), True
    raise ShapeError(f"{op_name}: rhs must be a Tensor or scalar, got {type(b).__name__}")


def add(a, b):
    bt, bd, is_scalar = _binary_data(a, b, "add")
    if is_scalar and bt is None:
        return _record(a.data + bd, a.requires_grad, _bwd_scale, (a,), 1.0)
    req = a.requires_grad or bt.requires_grad
    if is_scalar:
        return _record(a.data + bd, req, _bwd_add_scalar, (a, bt), bt.data.shape)
    return _record(a.data + bd, req, _bwd_add, (a, bt), None)


def sub(a, b):
    bt, bd, is_scalar = _binary_data(a, b, "sub")
    if is_scalar and bt is None:
        return _record(a.data - bd, a.requires_grad, _bwd_scale, (a,), 1.0)
    if is_scalar:
        return add(a, scale(bt, -1.0))
    return _record(a.data - bd, a.requires_grad or bt.requires_grad, _bwd_sub, (a, bt), None)


def mul(a, b):
    bt, bd, is_scalar = _binary_data(a, b, "mul")
    if is_scalar and bt is None:
        return scale(a, bd)
    req = a.requires_grad or bt.requires_grad
    if is_scalar:
        return _record(a.data * bd, req, _bwd_mul_scalar, (a, bt),
                       (a.data, bd, bt.data.shape))
    return _record(a.data * bd, req, _bwd_mul, (a, bt), (a.data, bd))


def scale(a, c):
    c = float(c)
    return _record(a.data * c, a.requires_grad, _bwd_scale, (a,), c)


def relu(a):
    out = np.maximum(a.data, 0.0)
    return _record(out, a.requires_grad, _bwd_relu, (a,), out)


def tanh(a):
    out = np.tanh(a.data)
    return _record(out, a.requires_grad, _bwd_tanh, (a,), out)


_ELEMENTWISE = {"add": add, "sub": sub, "mul": mul, "relu": relu, "tanh": tanh, "scale": scale}


def elementwise(op_kind, a, b=None):
    """Dispatch by kind: add | sub | mul | relu | tanh | scale."""
    fn = _ELEMENTWISE.get(op_kind)
    if fn is None:
        raise ContractError(f"unknown elementwise kind {op_kind!r}")
    if op_kind in ("relu", "tanh"):
        if b is not None:
            raise ContractError(f"{op_kind} is unary")
        return fn(a)
    if b is None:
        raise ContractError(f"{op_kind} needs a second operand")
    return fn(a, b)


# ---------------------------------------------------------------------------
# linear algebra


def _bwd_matmul(ctx, g):
    a_data, b_data = ctx
    return kernels.matmul_grad_a(g, b_data), kernels.matmul_grad_b(a_data, g)


def matmul(a, b):
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul expects 2-d operands, got {a.data.shape} and {b.data.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul inner dims differ: {a.data.shape} vs {b.data.shape}")
    out = kernels.matmul(a.data, b.data)
    return _record(out, a.requires_grad or b.requires_grad, _bwd_matmul, (a, b), (a.data, b.data))


def _bwd_bmm(ctx, g):
    a_data, b_data, tb = ctx
    return kernels.bmm_grad_a(g, b_data, tb), kernels.bmm_grad_b(g, a_data, tb)


def bmm(a, b, transpose_b=False):
    """Batched matmul of [p, m, k] with [p, k, n] (or [p, n, k] transposed)."""
    if a.data.ndim != 3 or b.data.ndim != 3 or a.data.shape[0] != b.data.shape[0]:
        raise ShapeError(f"bmm expects matching 3-d stacks, got {a.data.shape} and {b.data.shape}")
    inner_b = b.data.shape[2] if transpose_b else b.data.shape[1]
    if a.data.shape[2] != inner_b:
        raise ShapeError(f"bmm inner dims differ: {a.data.shape} vs {b.data.shape}")
    out = kernels.bmm(a.data, b.data, transpose_b)
    return _record(out, a.requires_grad or b.requires_grad, _bwd_bmm, (a, b),
                   (a.data, b.data, transpose_b))


def _bwd_linear(ctx, g):
    x2d, w_data, lead = ctx
    g2d = g.reshape(-1, g.shape[-1])
    gx = kernels.matmul_grad_a(g2d, w_data).reshape(*lead, w_data.shape[0])
    gw = kernels.matmul_grad_b(x2d, g2d)
    return gx, gw, g2d.sum(axis=0)


def linear(x, w, b):
    """x @ w + b over the last axis of x; x may have any leading shape."""
    k, n = w.data.shape
    if x.data.shape[-1] != k:
        raise ShapeError(f"linear: input last dim {x.data.shape[-1]} != weight rows {k}")
    lead = x.data.shape[:-1]
    x2d = x.data.reshape(-1, k)
    out = kernels.matmul(x2d, w.data)
    out += b.data
    out = out.reshape(*lead, n)
    req = x.requires_grad or w.requires_grad or b.requires_grad
    return _record(out, req, _bwd_linear, (x, w, b), (x2d, w.data, lead))


# ---------------------------------------------------------------------------
# softmax / loss


def _bwd_softmax(ctx, g):
    y, lead = ctx
    g2d = g.reshape(-1, g.shape[-1])
    return (kernels.softmax_rows_grad(y, g2d).reshape(*lead, y.shape[-1]),)


def softmax_rows(a, additive_mask=None):
    """Softmax over the last axis, stabilized by max subtraction.

    `additive_mask` is an optional constant array (same shape) added to
    the inputs first; used for causal/padding masks, it carries no gradient.
    """
    n = a.data.shape[-1]
    lead = a.data.shape[:-1]
    x = a.data
    if additive_mask is not None:
        x = x + additive_mask
    y = kernels.softmax_rows(np.ascontiguousarray(x.reshape(-1, n)))
    out = y.reshape(*lead, n)
    return _record(out, a.requires_grad, _bwd_softmax, (a,), (y, lead))


def _bwd_cross_entropy(ctx, g):
    probs, labels, kept, n_kept = ctx
    return (kernels.cross_entropy_grad(probs, labels, kept, n_kept, float(g)),)


def cross_entropy(logits, labels, ignore_index=None):
    """Mean NLL of `labels` under row-softmax of `logits`; scalar tensor.

    Rows whose label equals `ignore_index` are excluded from the mean.
    """
    if logits.data.ndim != 2:
        raise ShapeError(f"cross_entropy expects 2-d logits, got {logits.data.shape}")
    v = logits.data.shape[1]
    labels = np.ascontiguousarray(labels, dtype=np.int64)
    if labels.ndim != 1 or labels.shape[0] != logits.data.shape[0]:
        raise ShapeError(f"labels shape {labels.shape} != logits rows {logits.data.shape[0]}")
    bad = (labels < 0) | (labels >= v)
    if ignore_index is not None:
        bad &= labels != ignore_index
    if bad.any():
        raise LabelError(f"label {int(labels[bad][0])} outside [0, {v})")
    loss, probs, kept, n_kept = kernels.cross_entropy(logits.data, labels, ignore_index)
    if n_kept == 0:
        raise DegenerateBatchError("every position is ignored; loss undefined")
    return _record(np.float64(loss).reshape(()), logits.requires_grad,
                   _bwd_cross_entropy, (logits,), (probs, labels, kept, n_kept))


def _bwd_sum(ctx, g):
    return (np.full(ctx, float(g)),)


def sum_all(a):
    """Sum of all elements as a scalar tensor."""
    return _record(np.float64(a.data.sum()).reshape(()), a.requires_grad,
                   _bwd_sum, (a,), a.data.shape)


def mean_all(a):
    return scale(sum_all(a), 1.0 / a.data.size)


# ---------------------------------------------------------------------------
# structural ops


def _bwd_reshape(ctx, g):
    return (g.reshape(ctx),)


def reshape(a, shape):
    return _record(a.data.reshape(shape), a.requires_grad, _bwd_reshape, (a,), a.data.shape)


def _bwd_transpose(ctx, g):
    return (np.ascontiguousarray(g.transpose(ctx)),)


def transpose(a, axes):
    inverse = tuple(np.argsort(axes))
    out = np.ascontiguousarray(a.data.transpose(axes))
    return _record(out, a.requires_grad, _bwd_transpose, (a,), inverse)


def _bwd_split_heads(ctx, g):
    b, t, h, dk = ctx
    return (g.reshape(b, h, t, dk).transpose(0, 2, 1, 3).reshape(b, t, h * dk),)


def split_heads(x, n_heads):
    """[B, T, H*dk] -> [B*H, T, dk] for per-head batched attention."""
    b, t, d = x.data.shape
    dk = d // n_heads
    out = x.data.reshape(b, t, n_heads, dk).transpose(0, 2, 1, 3).reshape(b * n_heads, t, dk)
    out = np.ascontiguousarray(out)
    return _record(out, x.requires_grad, _bwd_split_heads, (x,), (b, t, n_heads, dk))


def _bwd_merge_heads(ctx, g):
    b, t, h, dk = ctx
    return (np.ascontiguousarray(
        g.reshape(b, t, h, dk).transpose(0, 2, 1, 3).reshape(b * h, t, dk)),)


def merge_heads(x, n_heads):
    """[B*H, T, dk] -> [B, T, H*dk], inverse of split_heads."""
    bh, t, dk = x.data.shape
    b = bh // n_heads
    out = x.data.reshape(b, n_heads, t, dk).transpose(0, 2, 1, 3).reshape(b, t, n_heads * dk)
    out = np.ascontiguousarray(out)
    return _record(out, x.requires_grad, _bwd_merge_heads, (x,), (b, t, n_heads, dk))


def _bwd_embedding(ctx, g):
    table_shape, ids = ctx
    gt = np.zeros(table_shape)
    np.add.at(gt, ids.reshape(-1), g.reshape(-1, table_shape[1]))
    return (gt,)


def embedding(table, ids):
    """Row gather from [V, d] by an integer id array; scatter-add backward."""
    ids = np.asarray(ids)
    v = table.data.shape[0]
    if ids.min(initial=0) < 0 or ids.max(initial=0) >= v:
        raise LabelError(f"token id outside [0, {v})")
    out = table.data[ids]
    return _record(out, table.requires_grad, _bwd_embedding, (table,), (table.data.shape, ids))


def _bwd_layer_norm(ctx, g):
    xhat, inv_std, gain = ctx
    d = xhat.shape[-1]
    dxhat = g * gain
    m1 = dxhat.mean(axis=-1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
    dx = inv_std * (dxhat - m1 - xhat * m2)
    dgain = (g * xhat).reshape(-1, d).sum(axis=0)
    dbias = g.reshape(-1, d).sum(axis=0)
    return dx, dgain, dbias


def layer_norm(x, gain, bias, eps=1e-5):
    """Normalize over the last axis, then scale and shift."""
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv_std
    out = xhat * gain.data + bias.data
    req = x.requires_grad or gain.requires_grad or bias.requires_grad
    return _record(out, req, _bwd_layer_norm, (x, gain, bias), (xhat, inv_std, gain.data))


def _bwd_dropout(ctx, g):
    return (g * ctx,)


def dropout(x, rate, seed):
    """Recorded mask-multiply with an inverted-dropout mask from `seed`."""
    if not 0.0 <= rate < 1.0:
        raise ContractError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return x
    rng = np.random.default_rng(seed)
    mask = (rng.random(x.data.shape) >= rate) / (1.0 - rate)
    return _record(x.data * mask, x.requires_grad, _bwd_dropout, (x,), mask)


def _bwd_conv2d(ctx, g):
    cols, w2d, x_shape, w_shape, pad = ctx
    b, c, h, wd = x_shape
    o, _, kh, kw = w_shape
    g2d = np.ascontiguousarray(g.transpose(0, 2, 3, 1).reshape(-1, o))
    gw = kernels.matmul_grad_b(cols, g2d).T.reshape(w_shape)
    gcols = kernels.matmul_grad_a(g2d, w2d)
    gx_pad = np.zeros((b, c, h + 2 * pad, wd + 2 * pad))
    gcols = gcols.reshape(b, h, wd, c, kh, kw)
    for i in range(kh):
        for j in range(kw):
            gx_pad[:, :, i:i + h, j:j + wd] += gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    gx = gx_pad[:, :, pad:pad + h, pad:pad + wd]
    gb = g2d.sum(axis=0)
    return gx, np.ascontiguousarray(gw), gb


def conv2d(x, w, b, pad=1):
    """'Same' 2-d convolution, stride 1: [B,C,H,W] * [O,C,kh,kw] -> [B,O,H,W]."""
    bsz, c, h, wd = x.data.shape
    o, c2, kh, kw = w.data.shape
    if c2 != c:
        raise ShapeError(f"conv2d channels differ: input {c}, kernel {c2}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    # cols[b, i, j] = receptive field at (i, j), flattened to C*kh*kw
    windows = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    cols = np.ascontiguousarray(
        windows[:, :, :h, :wd].transpose(0, 2, 3, 1, 4, 5).reshape(-1, c * kh * kw))
    w2d = np.ascontiguousarray(w.data.reshape(o, -1).T)
    out2d = kernels.matmul(cols, w2d) + b.data
    out = out2d.reshape(bsz, h, wd, o).transpose(0, 3, 1, 2)
    req = x.requires_grad or w.requires_grad or b.requires_grad
    return _record(np.ascontiguousarray(out), req, _bwd_conv2d, (x, w, b),
                   (cols, w2d, x.data.shape, w.data.shape, pad))


# ---------------------------------------------------------------------------
# backward pass


def backward(root):
    """Gradients of a recorded scalar w.r.t. every requires_grad leaf.

    Traverses the tape strictly in reverse node-id order and accumulates
    fan-out by summation, so repeated runs are bit-identical.
    """
    if not isinstance(root, Tensor) or root.data.size != 1:
        raise ContractError("backward root must be a scalar Tensor")
    rec = root._rec
    if rec is None or root.node_id is None:
        raise ContractError("backward root is not part of an active recording")
    n = len(rec.nodes)
    grads = [None] * n
    grads[root.node_id] = np.ones_like(root.data)
    for nid in range(root.node_id, -1, -1):
        g = grads[nid]
        if g is None:
            continue
        fn, input_ids, ctx = rec.nodes[nid]
        if fn is None:
            continue  # leaf
        in_grads = fn(ctx, g)
        for iid, ig in zip(input_ids, in_grads):
            if iid is None or ig is None:
                continue
            if grads[iid] is None:
                grads[iid] = ig
            else:
                grads[iid] = grads[iid] + ig
        grads[nid] = None  # free as we go
    store = GradStore(rec)
    for t in rec.leaf_refs:
        if t.requires_grad:
            nid = rec.leaf_ids[id(t)]
            g = grads[nid]
            store.put(nid, np.zeros_like(t.data) if g is None else g)
    return store


def finite_diff_grad(loss_fn, params, step=1e-5, entries=None):
    """Central-difference gradient estimate, the oracle for backward().

    `loss_fn(params)` must be deterministic and return a float (or a
    scalar Tensor). Perturbs parameter entries in place and restores the
    exact original bits. `entries` optionally restricts the estimate to
    a list of (name, flat_index) pairs; the default differentiates every
    entry of every parameter.
    """
    if step <= 0:
        raise ContractError(f"finite-difference step must be positive, got {step}")

    def evaluate():
        out = loss_fn(params)
        return out.item() if isinstance(out, Tensor) else float(out)

    store = GradStore()
    if entries is None:
        for name, t in params.items():
            flat = t.data.reshape(-1)
            g = np.zeros_like(flat)
            for i in range(flat.size):
                g[i] = _central_diff(flat, i, step, evaluate)
            store.put(name, g.reshape(t.data.shape))
        return store
    partial = {}
    for name, idx in entries:
        flat = params[name].data.reshape(-1)
        partial.setdefault(name, {})[idx] = _central_diff(flat, idx, step, evaluate)
    for name, by_idx in partial.items():
        g = np.zeros(params[name].data.size)
        for idx, val in by_idx.items():
            g[idx] = val
        store.put(name, g.reshape(params[name].data.shape))
    return store


def _central_diff(flat, i, step, evaluate):
    orig = flat[i]
    flat[i] = orig + step
    up = evaluate()
    flat[i] = orig - step
    down = evaluate()
    flat[i] = orig
    return (up - down) / (2.0 * step)
