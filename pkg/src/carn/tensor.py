"""Dense tensors with reverse-mode automatic differentiation.

Implements exactly the operation vocabulary the cascade amplifier network
needs: 2-d convolution (cross-correlation), 2x2 max pooling, batch
normalization, relu/tanh, affine maps, global average pooling, channel
concatenation, same-shape elementwise arithmetic, and the scalar
reductions used by the losses. Two precisions are supported: float32 for
training and float64 for finite-difference gradient checks.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

STANDARD_DTYPE = np.float32
HIGH_DTYPE = np.float64

BN_EPS = 1e-5
BN_MOMENTUM = 0.9


class Tensor:
    """A node in the computation graph: an nd-array plus its backward rule.

    ``data`` is a dense row-major numpy array (float32 or float64).
    ``grad`` has the same shape as ``data`` and is populated by
    ``backward()``; repeated use of a node sums its contributions.
    The graph formed by ``_parents`` references is acyclic by construction
    (every op creates a fresh output node).
    """

    __slots__ = ("data", "grad", "_parents", "_backward")

    def __init__(self, data, dtype=None, parents=(), backward=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(STANDARD_DTYPE)
        self.data = arr
        self.grad = None
        self._parents = tuple(parents)
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data.reshape(()))

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype})"

    def __add__(self, other):
        if isinstance(other, Tensor):
            return add(self, other)
        return offset(self, float(other))

    __radd__ = __add__

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return sub(self, other)
        return offset(self, -float(other))

    def __neg__(self):
        return scale(self, -1.0)

    def backward(self):
        """Reverse-topological gradient accumulation from a scalar root."""
        if self.data.size != 1:
            raise ValueError(
                f"backward() requires a scalar loss, got shape {self.data.shape}"
            )
        order = _toposort(self)
        for node in order:
            node.grad = np.zeros_like(node.data)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None:
                node._backward(node.grad)


def _toposort(root):
    """Iterative DFS topological order of the graph reachable from root."""
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


class BatchNormState:
    """Running per-channel moments used by inference-mode batch norm."""

    def __init__(self, channels, dtype=STANDARD_DTYPE):
        self.mean = np.zeros(channels, dtype=dtype)
        self.var = np.ones(channels, dtype=dtype)

    def astype(self, dtype):
        out = BatchNormState(self.mean.shape[0], dtype)
        out.mean = self.mean.astype(dtype)
        out.var = self.var.astype(dtype)
        return out

    def copy(self):
        return self.astype(self.mean.dtype)


# ---------------------------------------------------------------------------
# convolution / pooling


def _conv_padding(kh, kw, padding):
    if padding == "same":
        ph, pw = kh - 1, kw - 1
    elif padding == "valid":
        ph = pw = 0
    else:
        raise ValueError(f"padding must be 'same' or 'valid', got {padding!r}")
    return (ph // 2, ph - ph // 2), (pw // 2, pw - pw // 2)


def conv2d(x, kernel, bias, stride=1, padding="same"):
    """Strided 2-d cross-correlation with zero padding.

    'same' picks the padding that preserves spatial size at stride 1; the
    output extent is floor((H + pad - kh)/stride) + 1 either way.
    """
    if x.data.ndim != 4 or kernel.data.ndim != 4:
        raise ValueError("conv2d expects x[B,C,H,W] and kernel[F,C,kh,kw]")
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    B, C, H, W = x.data.shape
    F, Ck, kh, kw = kernel.data.shape
    if Ck != C:
        raise ValueError(
            f"channel mismatch: input has {C} channels, kernel expects {Ck}"
        )
    if bias.data.shape != (F,):
        raise ValueError(f"bias shape {bias.data.shape} != ({F},)")
    (pt, pb), (pl, pr) = _conv_padding(kh, kw, padding)
    Hp, Wp = H + pt + pb, W + pl + pr
    if kh > Hp or kw > Wp:
        raise ValueError(
            f"kernel {kh}x{kw} larger than padded input {Hp}x{Wp}"
        )
    Ho = (Hp - kh) // stride + 1
    Wo = (Wp - kw) // stride + 1

    if pt or pb or pl or pr:
        xp = np.pad(x.data, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
    else:
        xp = x.data
    # (B, C, Ho, Wo, kh, kw) strided view, then one contiguous copy
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5))
    cols = cols.reshape(B * Ho * Wo, C * kh * kw)
    kmat = kernel.data.reshape(F, C * kh * kw)
    out = cols @ kmat.T + bias.data
    out = out.reshape(B, Ho, Wo, F).transpose(0, 3, 1, 2)
    node = Tensor(np.ascontiguousarray(out), parents=(x, kernel, bias))

    def _bw(g):
        gmat = g.transpose(0, 2, 3, 1).reshape(B * Ho * Wo, F)
        bias.grad += gmat.sum(axis=0)
        kernel.grad += (gmat.T @ cols).reshape(kernel.data.shape)
        gcols = gmat @ kmat
        gwin = gcols.reshape(B, Ho, Wo, C, kh, kw).transpose(0, 3, 1, 2, 4, 5)
        gxp = np.zeros((B, C, Hp, Wp), dtype=g.dtype)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i:i + stride * Ho:stride, j:j + stride * Wo:stride] += (
                    gwin[:, :, :, :, i, j]
                )
        x.grad += gxp[:, :, pt:pt + H, pl:pl + W]

    node._backward = _bw
    return node


def maxpool2(x):
    """2x2 max pooling with stride 2; gradient goes to the first argmax."""
    B, C, H, W = x.data.shape
    if H % 2 or W % 2:
        raise ValueError(f"maxpool2 needs even spatial dims, got {H}x{W}")
    Ho, Wo = H // 2, W // 2
    win = x.data.reshape(B, C, Ho, 2, Wo, 2).transpose(0, 1, 2, 4, 3, 5)
    win = win.reshape(B, C, Ho, Wo, 4)
    idx = win.argmax(axis=-1)  # first occurrence on ties
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    node = Tensor(out, parents=(x,))

    def _bw(g):
        gwin = np.zeros((B, C, Ho, Wo, 4), dtype=g.dtype)
        np.put_along_axis(gwin, idx[..., None], g[..., None], axis=-1)
        gx = gwin.reshape(B, C, Ho, Wo, 2, 2).transpose(0, 1, 2, 4, 3, 5)
        x.grad += gx.reshape(B, C, H, W)

    node._backward = _bw
    return node


# ---------------------------------------------------------------------------
# normalization / activations


def batchnorm(x, gamma, beta, state, mode):
    """Per-channel batch normalization over (B, C, H, W) or (B, C).

    Train mode normalizes with batch statistics (epsilon 1e-5) and updates
    the running moments with momentum 0.9; infer mode uses the running
    moments as constants.
    """
    if mode not in ("train", "infer"):
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    if x.data.ndim == 4:
        axes = (0, 2, 3)
        cshape = (1, -1, 1, 1)
    elif x.data.ndim == 2:
        axes = (0,)
        cshape = (1, -1)
    else:
        raise ValueError(f"batchnorm expects 2-d or 4-d input, got {x.data.ndim}-d")
    C = x.data.shape[1]
    if gamma.data.shape != (C,) or beta.data.shape != (C,):
        raise ValueError(
            f"gamma/beta must have shape ({C},), got {gamma.data.shape}/{beta.data.shape}"
        )
    gam = gamma.data.reshape(cshape)
    bet = beta.data.reshape(cshape)

    if mode == "train":
        if x.data.shape[0] < 2:
            raise ValueError("train-mode batchnorm requires batch size >= 2")
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        state.mean = (BN_MOMENTUM * state.mean + (1 - BN_MOMENTUM) * mean).astype(
            state.mean.dtype
        )
        state.var = (BN_MOMENTUM * state.var + (1 - BN_MOMENTUM) * var).astype(
            state.var.dtype
        )
    else:
        mean = state.mean.astype(x.data.dtype)
        var = state.var.astype(x.data.dtype)

    inv_std = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (x.data - mean.reshape(cshape)) * inv_std.reshape(cshape)
    node = Tensor(gam * xhat + bet, parents=(x, gamma, beta))
    m = x.data.size // C

    def _bw(g):
        gamma.grad += (g * xhat).sum(axis=axes)
        beta.grad += g.sum(axis=axes)
        if mode == "train":
            gsum = g.sum(axis=axes).reshape(cshape)
            gxhat_sum = (g * xhat).sum(axis=axes).reshape(cshape)
            x.grad += (
                gam * inv_std.reshape(cshape) / m * (m * g - gsum - xhat * gxhat_sum)
            )
        else:
            x.grad += g * gam * inv_std.reshape(cshape)

    node._backward = _bw
    return node


def relu(x):
    node = Tensor(np.maximum(x.data, 0), parents=(x,))

    def _bw(g):
        x.grad += g * (x.data > 0)  # derivative at 0 defined as 0

    node._backward = _bw
    return node


def tanh(x):
    out = np.tanh(x.data)
    node = Tensor(out, parents=(x,))

    def _bw(g):
        x.grad += g * (1.0 - out * out)

    node._backward = _bw
    return node


def activation(x, kind):
    if kind == "relu":
        return relu(x)
    if kind == "tanh":
        return tanh(x)
    raise ValueError(f"unknown activation kind {kind!r}")


# ---------------------------------------------------------------------------
# linear algebra / shape ops


def dense(x, W, b):
    """Affine map x[B,n] @ W[m,n].T + b[m], no activation."""
    if x.data.ndim != 2 or W.data.ndim != 2:
        raise ValueError("dense expects x[B,n] and W[m,n]")
    if x.data.shape[1] != W.data.shape[1]:
        raise ValueError(
            f"inner dims disagree: x has {x.data.shape[1]}, W expects {W.data.shape[1]}"
        )
    if b.data.shape != (W.data.shape[0],):
        raise ValueError(f"bias shape {b.data.shape} != ({W.data.shape[0]},)")
    node = Tensor(x.data @ W.data.T + b.data, parents=(x, W, b))

    def _bw(g):
        x.grad += g @ W.data
        W.grad += g.T @ x.data
        b.grad += g.sum(axis=0)

    node._backward = _bw
    return node


def global_avg_pool(x):
    """Mean over the spatial axes: (B, C, H, W) -> (B, C)."""
    B, C, H, W = x.data.shape
    node = Tensor(x.data.mean(axis=(2, 3)), parents=(x,))

    def _bw(g):
        x.grad += np.broadcast_to(g[:, :, None, None] / (H * W), (B, C, H, W))

    node._backward = _bw
    return node


def concat_channels(a, b):
    """Channel-axis concatenation of (B, C1, H, W) and (B, C2, H, W)."""
    if a.data.ndim != 4 or b.data.ndim != 4:
        raise ValueError("concat_channels expects 4-d tensors")
    if a.data.shape[0] != b.data.shape[0] or a.data.shape[2:] != b.data.shape[2:]:
        raise ValueError(
            f"batch/spatial dims disagree: {a.data.shape} vs {b.data.shape}"
        )
    C1 = a.data.shape[1]
    node = Tensor(np.concatenate([a.data, b.data], axis=1), parents=(a, b))

    def _bw(g):
        a.grad += g[:, :C1]
        b.grad += g[:, C1:]

    node._backward = _bw
    return node


def _require_same_shape(a, b, op):
    if a.data.shape != b.data.shape:
        raise ValueError(f"{op} needs identical shapes, got {a.data.shape} vs {b.data.shape}")


def add(a, b):
    _require_same_shape(a, b, "add")
    node = Tensor(a.data + b.data, parents=(a, b))

    def _bw(g):
        a.grad += g
        b.grad += g

    node._backward = _bw
    return node


def sub(a, b):
    _require_same_shape(a, b, "sub")
    node = Tensor(a.data - b.data, parents=(a, b))

    def _bw(g):
        a.grad += g
        b.grad -= g

    node._backward = _bw
    return node


def mul(a, b):
    _require_same_shape(a, b, "mul")
    node = Tensor(a.data * b.data, parents=(a, b))

    def _bw(g):
        a.grad += g * b.data
        b.grad += g * a.data

    node._backward = _bw
    return node


def elementwise(a, b, kind):
    if kind == "mul":
        return mul(a, b)
    if kind == "add":
        return add(a, b)
    raise ValueError(f"unknown elementwise kind {kind!r}")


def scale(x, s):
    s = float(s)
    node = Tensor(x.data * s, parents=(x,))

    def _bw(g):
        x.grad += g * s

    node._backward = _bw
    return node


def offset(x, c):
    c = float(c)
    node = Tensor(x.data + c, parents=(x,))

    def _bw(g):
        x.grad += g

    node._backward = _bw
    return node


# ---------------------------------------------------------------------------
# reductions


def absolute(x):
    node = Tensor(np.abs(x.data), parents=(x,))

    def _bw(g):
        x.grad += g * np.sign(x.data)  # subgradient at 0 is 0

    node._backward = _bw
    return node


def sum_all(x):
    node = Tensor(np.asarray(x.data.sum()).reshape(()), dtype=x.data.dtype, parents=(x,))

    def _bw(g):
        x.grad += g

    node._backward = _bw
    return node


def mean_all(x):
    return scale(sum_all(x), 1.0 / x.data.size)


def l2_norm(x):
    """Non-squared Euclidean norm of the flattened tensor, as a scalar."""
    n = float(np.sqrt((x.data.astype(np.float64) ** 2).sum()))
    node = Tensor(np.asarray(n).reshape(()), dtype=x.data.dtype, parents=(x,))

    def _bw(g):
        if n > 0:
            x.grad += g * (x.data / x.data.dtype.type(n))

    node._backward = _bw
    return node
