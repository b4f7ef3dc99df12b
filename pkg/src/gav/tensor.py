"""Minimal reverse-mode automatic differentiation on numpy arrays.

Just enough machinery to express a small convolutional encoder, an LSTM
decoder with spatial attention, and their losses: a `Tensor` wrapper, a
define-by-run `Graph` tape, a fixed set of differentiable ops, central
finite-difference gradient checking, and an RMSProp optimizer.

Training runs in float32. `grad_check` promotes everything to float64 so
the finite-difference oracle is not drowned by single-precision noise.
"""

import numpy as np
from scipy.special import expit

DEFAULT_DTYPE = np.float32

__all__ = [
    "Tensor", "Graph", "ShapeError", "backward", "forward", "grad_check",
    "check_gradients", "RmsPropState", "rmsprop_step", "zero_grads",
    "global_grad_norm", "clip_grads", "OP_CHECKS",
    "matmul", "conv2d", "max_pool", "relu", "tanh", "sigmoid", "softplus",
    "add", "sub", "mul", "neg", "concat", "softmax", "embedding", "slice_",
    "reduce_sum", "reduce_mean", "reshape", "transpose", "lstm_cell",
    "attention_read",
]


class ShapeError(ValueError):
    """Raised when an op receives inputs whose shapes do not fit it."""


class Tensor:
    """A dense float array with an optional gradient buffer.

    `data` is row-major float32 (or float64 inside gradient checks).
    `grad` stays None until a backward pass deposits into it. Ops never
    mutate `data`, so grad-free tensors are safe to share across threads.
    """

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad=False, dtype=None):
        if dtype is None:
            held = getattr(data, "dtype", None)  # ndarray or numpy scalar
            dtype = held if held in (np.float32, np.float64) else DEFAULT_DTYPE
        self.data = np.asarray(data, dtype=dtype)
        self.grad = None
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data, requires_grad=False)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


class Graph:
    """Tape of executed ops, in execution (hence topological) order.

    Used as a context manager: ops run inside `with Graph() as g:` record
    a backward closure for every output that requires grad. A fresh graph
    is built for every training step; scoring without an active graph
    records nothing.
    """

    _stack = []

    def __init__(self):
        self.nodes = []  # (output tensor, backward closure)

    def __enter__(self):
        Graph._stack.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        Graph._stack.pop()
        return False

    @staticmethod
    def current():
        return Graph._stack[-1] if Graph._stack else None

    def __len__(self):
        return len(self.nodes)


def backward(graph, loss):
    """Populate grads of every requires_grad tensor reachable from `loss`.

    Grads accumulate: a tensor used twice receives the sum of both paths.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not graph.nodes:
        raise ValueError("backward called on an empty graph")
    loss.grad = np.ones_like(loss.data)
    for out, fn in reversed(graph.nodes):
        if out.grad is not None:
            fn(out.grad)


def _record(out, fn):
    g = Graph.current()
    if g is not None and out.requires_grad:
        g.nodes.append((out, fn))


def _accum(t, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        # first write owns a fresh buffer; np.array also densifies views
        t.grad = np.array(g, dtype=t.data.dtype)
        if t.grad.shape != t.data.shape:
            t.grad = np.broadcast_to(t.grad, t.data.shape).copy()
    else:
        t.grad += g


def _wrap_like(x, ref):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=ref.dtype), dtype=ref.dtype)


def _unbroadcast(g, shape):
    """Sum `g` down to `shape`, undoing numpy broadcasting."""
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise and linear ops


def add(a, b):
    b = _wrap_like(b, a)
    out = Tensor(a.data + b.data, requires_grad=a.requires_grad or b.requires_grad)

    def back(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(g, b.shape))

    _record(out, back)
    return out


def sub(a, b):
    b = _wrap_like(b, a)
    out = Tensor(a.data - b.data, requires_grad=a.requires_grad or b.requires_grad)

    def back(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(-g, b.shape))

    _record(out, back)
    return out


def mul(a, b):
    b = _wrap_like(b, a)
    out = Tensor(a.data * b.data, requires_grad=a.requires_grad or b.requires_grad)

    def back(g):
        _accum(a, _unbroadcast(g * b.data, a.shape))
        _accum(b, _unbroadcast(g * a.data, b.shape))

    _record(out, back)
    return out


def neg(a):
    out = Tensor(-a.data, requires_grad=a.requires_grad)
    _record(out, lambda g: _accum(a, -g))
    return out


def matmul(a, b):
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} x {b.shape}")
    out = Tensor(a.data @ b.data, requires_grad=a.requires_grad or b.requires_grad)

    def back(g):
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)

    _record(out, back)
    return out


def relu(a):
    out = Tensor(np.maximum(a.data, 0), requires_grad=a.requires_grad)
    _record(out, lambda g: _accum(a, g * (a.data > 0)))
    return out


def tanh(a):
    y = np.tanh(a.data)
    out = Tensor(y, requires_grad=a.requires_grad)
    _record(out, lambda g: _accum(a, g * (1.0 - y * y)))
    return out


def sigmoid(a):
    y = expit(a.data)
    out = Tensor(y, requires_grad=a.requires_grad)
    _record(out, lambda g: _accum(a, g * y * (1.0 - y)))
    return out


def softplus(a):
    # log(1 + e^x) without overflow; gradient is sigmoid(x)
    out = Tensor(np.logaddexp(0.0, a.data), requires_grad=a.requires_grad)
    _record(out, lambda g: _accum(a, g * expit(a.data)))
    return out


def softmax(a, axis=-1):
    """Softmax along one axis, computed with max-subtraction."""
    m = a.data.max(axis=axis, keepdims=True)
    e = np.exp(a.data - m)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(y, requires_grad=a.requires_grad)

    def back(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        _accum(a, (g - dot) * y)

    _record(out, back)
    return out


def concat(tensors, axis=0):
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("concat: empty tensor list")
    out = Tensor(
        np.concatenate([t.data for t in tensors], axis=axis),
        requires_grad=any(t.requires_grad for t in tensors),
    )
    sizes = [t.shape[axis] for t in tensors]

    def back(g):
        offsets = np.cumsum(sizes)[:-1]
        for t, piece in zip(tensors, np.split(g, offsets, axis=axis)):
            _accum(t, piece)

    _record(out, back)
    return out


def embedding(table, indices):
    """Row lookup `table[indices]`; gradients scatter-add into the table."""
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise IndexError(
            f"embedding: index out of range for table with {table.shape[0]} rows"
        )
    out = Tensor(table.data[idx], requires_grad=table.requires_grad)

    def back(g):
        if not table.requires_grad:
            return
        if table.grad is None:
            table.grad = np.zeros_like(table.data)
        np.add.at(table.grad, idx, g)

    _record(out, back)
    return out


def slice_(a, key):
    """Basic indexing `a[key]`; the backward pass pads grads back in place."""
    out = Tensor(a.data[key], requires_grad=a.requires_grad)

    def back(g):
        if not a.requires_grad:
            return
        if a.grad is None:
            a.grad = np.zeros_like(a.data)
        a.grad[key] += g

    _record(out, back)
    return out


def reduce_sum(a, axis=None, keepdims=False):
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims), requires_grad=a.requires_grad)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g, a.shape).copy())

    _record(out, back)
    return out


def reduce_mean(a, axis=None, keepdims=False):
    out = Tensor(a.data.mean(axis=axis, keepdims=keepdims), requires_grad=a.requires_grad)
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g, a.shape) / n)

    _record(out, back)
    return out


def reshape(a, shape):
    out = Tensor(a.data.reshape(shape), requires_grad=a.requires_grad)
    _record(out, lambda g: _accum(a, g.reshape(a.shape)))
    return out


def transpose(a, axes=None):
    if axes is None:
        axes = tuple(reversed(range(a.data.ndim)))
    inverse = np.argsort(axes)
    out = Tensor(a.data.transpose(axes), requires_grad=a.requires_grad)
    _record(out, lambda g: _accum(a, g.transpose(inverse)))
    return out


# ---------------------------------------------------------------------------
# spatial ops


def _same_pad(size, kernel, stride):
    out = -(-size // stride)  # ceil division
    total = max((out - 1) * stride + kernel - size, 0)
    return total // 2, total - total // 2


def conv2d(x, kernel, stride=1, padding="valid"):
    """2-D convolution, NHWC input against a [kh, kw, Cin, Cout] kernel.

    `padding` is "valid" or "same" (zeros, TF-style split). Implemented as
    im2col + one matmul so the heavy lifting stays inside BLAS.
    """
    if x.data.ndim != 4 or kernel.data.ndim != 4:
        raise ShapeError(
            f"conv2d: need NHWC input and [kh,kw,Cin,Cout] kernel, "
            f"got {x.shape} and {kernel.shape}"
        )
    if x.shape[3] != kernel.shape[2]:
        raise ShapeError(
            f"conv2d: input channels {x.shape[3]} != kernel channels {kernel.shape[2]}"
        )
    if padding not in ("valid", "same"):
        raise ValueError(f"conv2d: unknown padding {padding!r}")
    n, h, w, cin = x.shape
    kh, kw, _, cout = kernel.shape

    if padding == "same":
        pt, pb = _same_pad(h, kh, stride)
        pl, pr = _same_pad(w, kw, stride)
    else:
        pt = pb = pl = pr = 0
        if h < kh or w < kw:
            raise ShapeError(f"conv2d: kernel {kernel.shape} larger than input {x.shape}")
    xp = x.data
    if pt or pb or pl or pr:
        xp = np.pad(xp, ((0, 0), (pt, pb), (pl, pr), (0, 0)))
    ph, pw = xp.shape[1], xp.shape[2]
    ho = (ph - kh) // stride + 1
    wo = (pw - kw) // stride + 1

    s0, s1, s2, s3 = xp.strides
    windows = np.lib.stride_tricks.as_strided(
        xp, (n, ho, wo, kh, kw, cin), (s0, s1 * stride, s2 * stride, s1, s2, s3)
    )
    col = windows.reshape(n * ho * wo, kh * kw * cin)
    kmat = kernel.data.reshape(kh * kw * cin, cout)
    out = Tensor(
        (col @ kmat).reshape(n, ho, wo, cout),
        requires_grad=x.requires_grad or kernel.requires_grad,
    )

    def back(g):
        gmat = g.reshape(n * ho * wo, cout)
        if kernel.requires_grad:
            _accum(kernel, (col.T @ gmat).reshape(kernel.shape))
        if x.requires_grad:
            dcol = (gmat @ kmat.T).reshape(n, ho, wo, kh, kw, cin)
            dxp = np.zeros((n, ph, pw, cin), dtype=g.dtype)
            for i in range(kh):
                hi = i + ho * stride
                for j in range(kw):
                    wj = j + wo * stride
                    dxp[:, i:hi:stride, j:wj:stride, :] += dcol[:, :, :, i, j, :]
            _accum(x, dxp[:, pt:pt + h, pl:pl + w, :])

    _record(out, back)
    return out


def max_pool(x, size=2, stride=None):
    """Max pooling over NHWC input; gradient routes to the first max."""
    if stride is None:
        stride = size
    if x.data.ndim != 4:
        raise ShapeError(f"max_pool: need NHWC input, got {x.shape}")
    n, h, w, c = x.shape
    if h < size or w < size:
        raise ShapeError(f"max_pool: window {size} larger than input {x.shape}")
    ho = (h - size) // stride + 1
    wo = (w - size) // stride + 1
    s0, s1, s2, s3 = x.data.strides
    windows = np.lib.stride_tricks.as_strided(
        x.data, (n, ho, wo, size, size, c), (s0, s1 * stride, s2 * stride, s1, s2, s3)
    )
    flat = windows.reshape(n, ho, wo, size * size, c)
    arg = flat.argmax(axis=3)
    out_data = np.take_along_axis(flat, arg[:, :, :, None, :], axis=3)[:, :, :, 0, :]
    out = Tensor(out_data, requires_grad=x.requires_grad)

    def back(g):
        if not x.requires_grad:
            return
        if x.grad is None:
            x.grad = np.zeros_like(x.data)
        ii, jj = np.divmod(arg, size)  # offsets within each window
        ni, hi, wi, ci = np.indices(arg.shape)
        rows = hi * stride + ii
        cols = wi * stride + jj
        np.add.at(x.grad, (ni, rows, cols, ci), g)

    _record(out, back)
    return out


def attention_read(h_prev, flat, uf, w, v):
    """Fused attention: relevance scores, spatial softmax, pooled context.

    e = tanh(uf + h_prev @ w) @ v;  alpha = softmax(e);  ctx = alpha' @ flat.
    Returns (ctx tensor, alpha array, e array); the maps are detached views
    for tracing, so gradients flow only through the context vector.
    """
    if h_prev.data.ndim != 2 or w.shape[0] != h_prev.shape[1] or v.data.ndim != 1:
        raise ShapeError(
            f"attention_read: inconsistent shapes h{h_prev.shape} w{w.shape} v{v.shape}"
        )
    wh = h_prev.data @ w.data                       # [1, A]
    pre = np.tanh(uf.data + wh)                     # [HW, A]
    e = pre @ v.data.reshape(-1, 1)                 # [HW, 1]
    m = e.max(axis=0, keepdims=True)
    ex = np.exp(e - m)
    alpha = ex / ex.sum(axis=0, keepdims=True)
    ctx_data = alpha.T @ flat.data                  # [1, F]
    req = any(t.requires_grad for t in (h_prev, flat, uf, w, v))
    ctx = Tensor(ctx_data, requires_grad=req)

    def back(gctx):
        galpha = flat.data @ gctx.T                 # [HW, 1]
        _accum(flat, alpha @ gctx)
        ge = alpha * (galpha - (galpha * alpha).sum())
        _accum(v, (pre.T @ ge).reshape(-1))
        gpre = ge @ v.data.reshape(1, -1)
        gz = gpre * (1.0 - pre * pre)
        _accum(uf, gz)
        gwh = gz.sum(axis=0, keepdims=True)
        _accum(h_prev, gwh @ w.data.T)
        _accum(w, h_prev.data.T @ gwh)

    _record(ctx, back)
    return ctx, alpha, e


def grad_check_attention_read(seed=0):
    rng = np.random.default_rng(seed)
    hw, f, a, d = 6, 4, 3, 5
    tensors = [
        Tensor(rng.standard_normal(s), requires_grad=True, dtype=np.float64)
        for s in [(1, d), (hw, f), (hw, a), (d, a), (a,)]
    ]
    return check_gradients(lambda ts: attention_read(*ts)[0], tensors, seed=seed)


def attention_read_batch(h_prev, flat_rows, uf_rows, w, v):
    """attention_read over M independent rows at once.

    h_prev is [M, D]; flat_rows/uf_rows carry each row's own feature grid
    ([M, HW, F] and [M, HW, A]). Used by the training loop, where many
    candidate rollouts advance in lockstep. Returns (ctx [M, F], alpha
    [M, HW] detached).
    """
    if h_prev.data.ndim != 2 or uf_rows.data.ndim != 3 or flat_rows.data.ndim != 3:
        raise ShapeError(
            f"attention_read_batch: need [M,D], [M,HW,F], [M,HW,A], got "
            f"{h_prev.shape}, {flat_rows.shape}, {uf_rows.shape}"
        )
    wh = h_prev.data @ w.data                              # [M, A]
    pre = np.tanh(uf_rows.data + wh[:, None, :])           # [M, HW, A]
    e = pre @ v.data                                       # [M, HW]
    m = e.max(axis=1, keepdims=True)
    ex = np.exp(e - m)
    alpha = ex / ex.sum(axis=1, keepdims=True)
    ctx_data = (alpha[:, None, :] @ flat_rows.data)[:, 0, :]   # [M, F]
    req = any(t.requires_grad for t in (h_prev, flat_rows, uf_rows, w, v))
    ctx = Tensor(ctx_data, requires_grad=req)

    def back(gctx):
        galpha = (flat_rows.data @ gctx[:, :, None])[:, :, 0]      # [M, HW]
        _accum(flat_rows, alpha[:, :, None] * gctx[:, None, :])
        ge = alpha * (galpha - (galpha * alpha).sum(axis=1, keepdims=True))
        _accum(v, np.einsum("mha,mh->a", pre, ge))
        gz = ge[:, :, None] * v.data * (1.0 - pre * pre)           # [M, HW, A]
        _accum(uf_rows, gz)
        gwh = gz.sum(axis=1)                                       # [M, A]
        _accum(h_prev, gwh @ w.data.T)
        _accum(w, h_prev.data.T @ gwh)

    _record(ctx, back)
    return ctx, alpha


def grad_check_attention_read_batch(seed=0):
    rng = np.random.default_rng(seed)
    m, hw, f, a, d = 3, 4, 5, 3, 4
    tensors = [
        Tensor(rng.standard_normal(s), requires_grad=True, dtype=np.float64)
        for s in [(m, d), (m, hw, f), (m, hw, a), (d, a), (a,)]
    ]
    return check_gradients(lambda ts: attention_read_batch(*ts)[0], tensors, seed=seed)


def lstm_cell(x, h_prev, c_prev, wx, wh, b):
    """One fused LSTM step; returns (h, c). Gate layout along z: [i f g o].

    Equivalent to composing matmul/add/slice/sigmoid/tanh/mul primitives,
    fused into a single tape node because the decoder spends most of its
    time here. The backward fires when h's gradient arrives and also folds
    in whatever gradient c has accumulated by then, which is sound because
    every consumer of either output runs earlier in reverse order.
    """
    d = wh.shape[0]
    if x.data.ndim != 2 or wx.shape != (x.shape[1], 4 * d) or b.shape != (4 * d,):
        raise ShapeError(
            f"lstm_cell: inconsistent shapes x{x.shape} wx{wx.shape} "
            f"wh{wh.shape} b{b.shape}"
        )
    z = x.data @ wx.data + h_prev.data @ wh.data + b.data
    i = expit(z[:, :d])
    f = expit(z[:, d:2 * d])
    g_in = np.tanh(z[:, 2 * d:3 * d])
    o = expit(z[:, 3 * d:])
    c_new = f * c_prev.data + i * g_in
    tc = np.tanh(c_new)
    h_new = o * tc
    req = any(t.requires_grad for t in (x, h_prev, c_prev, wx, wh, b))
    h = Tensor(h_new, requires_grad=req)
    c = Tensor(c_new, requires_grad=req)

    def back(gh):
        gc = c.grad if c.grad is not None else 0.0
        go = gh * tc
        gc_total = gh * o * (1.0 - tc * tc) + gc
        gi = gc_total * g_in
        gf = gc_total * c_prev.data
        gg = gc_total * i
        dz = np.concatenate(
            [
                gi * i * (1.0 - i),
                gf * f * (1.0 - f),
                gg * (1.0 - g_in * g_in),
                go * o * (1.0 - o),
            ],
            axis=1,
        )
        _accum(x, dz @ wx.data.T)
        _accum(h_prev, dz @ wh.data.T)
        _accum(c_prev, gc_total * f)
        _accum(wx, x.data.T @ dz)
        _accum(wh, h_prev.data.T @ dz)
        _accum(b, dz.sum(axis=0))

    _record(h, back)
    return h, c


# ---------------------------------------------------------------------------
# the op registry and the forward dispatcher

_OP_TABLE = {
    "matmul": matmul,
    "conv2d": conv2d,
    "max_pool": max_pool,
    "relu": relu,
    "tanh": tanh,
    "sigmoid": sigmoid,
    "softplus": softplus,
    "add": add,
    "sub": sub,
    "mul": mul,
    "neg": neg,
    "concat": concat,
    "softmax": softmax,
    "embedding": embedding,
    "slice": slice_,
    "reduce_sum": reduce_sum,
    "reduce_mean": reduce_mean,
    "reshape": reshape,
    "transpose": transpose,
}


def forward(op_kind, inputs, **attrs):
    """Run one registered op by name on a sequence of tensors."""
    try:
        fn = _OP_TABLE[op_kind]
    except KeyError:
        raise ValueError(f"unknown op kind {op_kind!r}") from None
    if op_kind == "concat":
        return fn(inputs, **attrs)
    return fn(*inputs, **attrs)


def check_gradients(fn, tensors, seed=0, step=1e-4):
    """Compare analytic grads of `fn(tensors)` against central differences.

    `fn` maps the tensors to a single output tensor; the output is reduced
    to a scalar through a fixed random projection so that cancelling errors
    cannot hide (a plain sum of softmax outputs, say, has zero gradient).
    All tensors must be float64. Returns the max elementwise relative error
    over every input element.
    """
    rng = np.random.default_rng(seed)

    def scalar():
        out = fn(tensors)
        return float(np.sum(out.data * proj))

    with Graph() as g:
        out = fn(tensors)
        proj = rng.standard_normal(out.shape)
        loss = reduce_sum(mul(out, Tensor(proj, dtype=np.float64)))
        backward(g, loss)

    worst = 0.0
    for t in tensors:
        if not t.requires_grad:
            continue
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + step
            up = scalar()
            flat[i] = keep - step
            down = scalar()
            flat[i] = keep
            numeric = (up - down) / (2 * step)
            a = analytic.reshape(-1)[i]
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst


def grad_check(op_kind, inputs, seed=0, step=1e-4, **attrs):
    """Gradient-check one registered op on the given inputs.

    Inputs are promoted to float64 tensors with requires_grad set; returns
    max relative error between the analytic and central-difference grads.
    """
    tensors = [
        t if isinstance(t, Tensor) else Tensor(np.asarray(t, dtype=np.float64), requires_grad=True)
        for t in inputs
    ]
    for t in tensors:
        t.data = t.data.astype(np.float64)
        t.grad = None

    if op_kind == "concat":
        fn = lambda ts: concat(ts, **attrs)
    else:
        fn = lambda ts: _OP_TABLE[op_kind](*ts, **attrs)
    return check_gradients(fn, tensors, seed=seed, step=step)


def _rand(rng, *shape):
    return rng.standard_normal(shape)


def _away_from_zero(rng, *shape):
    # relu's kink is not differentiable; keep samples off it
    x = rng.standard_normal(shape)
    return x + 0.25 * np.sign(x) + np.where(x == 0, 0.25, 0.0)


def _well_separated(rng, *shape):
    # max_pool switches argmax under perturbation when window values are
    # near-tied; use a shuffled grid with spacing far above the FD step
    n = int(np.prod(shape))
    return rng.permutation(np.linspace(-1.0, 1.0, n)).reshape(shape)


# op_kind -> rng -> (inputs, attrs); used by the gradcheck verification pass
OP_CHECKS = {
    "matmul": lambda rng: ([_rand(rng, 3, 4), _rand(rng, 4, 2)], {}),
    "conv2d": lambda rng: ([_rand(rng, 1, 8, 8, 2), _rand(rng, 3, 3, 2, 3)], {"stride": 2, "padding": "same"}),
    "max_pool": lambda rng: ([_well_separated(rng, 1, 6, 6, 2)], {"size": 2}),
    "relu": lambda rng: ([_away_from_zero(rng, 10)], {}),
    "tanh": lambda rng: ([_rand(rng, 10)], {}),
    "sigmoid": lambda rng: ([_rand(rng, 10)], {}),
    "softplus": lambda rng: ([_rand(rng, 10)], {}),
    "add": lambda rng: ([_rand(rng, 3, 4), _rand(rng, 1, 4)], {}),
    "sub": lambda rng: ([_rand(rng, 3, 4), _rand(rng, 3, 4)], {}),
    "mul": lambda rng: ([_rand(rng, 3, 4), _rand(rng, 3, 1)], {}),
    "neg": lambda rng: ([_rand(rng, 5)], {}),
    "concat": lambda rng: ([_rand(rng, 2, 3), _rand(rng, 4, 3)], {"axis": 0}),
    "softmax": lambda rng: ([_rand(rng, 4, 6)], {"axis": 1}),
    "slice": lambda rng: ([_rand(rng, 5, 6)], {"key": (slice(1, 4), slice(2, 6))}),
    "reduce_sum": lambda rng: ([_rand(rng, 3, 4)], {"axis": 1}),
    "reduce_mean": lambda rng: ([_rand(rng, 3, 4)], {"axis": 0}),
    "reshape": lambda rng: ([_rand(rng, 3, 4)], {"shape": (2, 6)}),
    "transpose": lambda rng: ([_rand(rng, 3, 4, 2)], {"axes": (2, 0, 1)}),
}


def grad_check_embedding(seed=0):
    """Embedding needs integer indices, so it gets its own check."""
    rng = np.random.default_rng(seed)
    table = Tensor(rng.standard_normal((7, 3)), requires_grad=True, dtype=np.float64)
    idx = rng.integers(0, 7, size=6)
    return check_gradients(lambda ts: embedding(ts[0], idx), [table], seed=seed)


def grad_check_lstm_cell(seed=0):
    """The fused cell has two outputs; check through a concat of both."""
    rng = np.random.default_rng(seed)
    d, n_in = 5, 7
    tensors = [
        Tensor(rng.standard_normal(s), requires_grad=True, dtype=np.float64)
        for s in [(2, n_in), (2, d), (2, d), (n_in, 4 * d), (d, 4 * d), (4 * d,)]
    ]

    def fn(ts):
        h, c = lstm_cell(*ts)
        return concat([h, c], axis=1)

    return check_gradients(fn, tensors, seed=seed)


# ---------------------------------------------------------------------------
# optimizer


class RmsPropState:
    """Per-parameter squared-gradient accumulators plus hyperparameters."""

    def __init__(self, params, learning_rate=0.001, decay=0.9, epsilon=1e-8):
        self.learning_rate = learning_rate
        self.decay = decay
        self.epsilon = epsilon
        self.acc = {name: np.zeros_like(t.data) for name, t in params.items()}


def rmsprop_step(params, state):
    """acc <- decay*acc + (1-decay)*g^2;  p <- p - lr*g/sqrt(acc+eps)."""
    for name, t in params.items():
        if t.grad is None:
            raise ValueError(f"rmsprop_step: parameter {name!r} has no gradient")
        acc = state.acc[name]
        acc *= state.decay
        acc += (1.0 - state.decay) * t.grad * t.grad
        t.data -= state.learning_rate * t.grad / np.sqrt(acc + state.epsilon)


def zero_grads(params):
    for t in params.values():
        t.grad = None


def global_grad_norm(params):
    total = 0.0
    for t in params.values():
        if t.grad is not None:
            total += float(np.sum(t.grad.astype(np.float64) ** 2))
    return float(np.sqrt(total))


def clip_grads(params, max_norm):
    """Scale all grads down so their global norm is at most max_norm."""
    norm = global_grad_norm(params)
    if norm > max_norm > 0:
        scale = max_norm / (norm + 1e-12)
        for t in params.values():
            if t.grad is not None:
                t.grad *= scale
    return norm
