"""Dense 2-D tensors with reverse-mode automatic differentiation.

numpy arrays hold the data; every differentiable op records its parent
tensors and a gradient closure, so ``backward`` can walk the recorded
tape once in reverse topological order. The op surface is deliberately
small: matrix product, 1-D convolution, row softmax / log-softmax,
layer norm, a few elementwise activations, and the gather/slice ops the
model needs. Anything else is a ShapeError.

Two pieces of global (per-thread-unsafe) state live here:

* a grad-enable flag, toggled by :func:`no_grad`, so inference does not
  build tapes;
* a stack of multiply-accumulate counters (:func:`count_macs`) used to
  cross-check the analytic cost model against what actually ran.
  Only matmul and conv1d are counted, matching the cost model's
  convention that normalizations, activations and residual adds are
  free.
"""

from __future__ import annotations

import math
from contextlib import contextmanager

import numpy as np

from .errors import ContractError, MaskError, ShapeError

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable tape recording inside the block (inference mode)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class MacCounter:
    """Accumulates multiply-add counts of matmul/conv primitives."""

    def __init__(self):
        self.macs = 0

    @property
    def flops(self):
        # 2 floating-point ops per multiply-add.
        return 2 * self.macs


_counters: list[MacCounter] = []


@contextmanager
def count_macs():
    """Count multiply-adds executed inside the block."""
    counter = MacCounter()
    _counters.append(counter)
    try:
        yield counter
    finally:
        _counters.remove(counter)


def _tally(macs):
    for counter in _counters:
        counter.macs += macs


class Tensor:
    """A dense float32/float64 array plus optional autodiff bookkeeping."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def T(self):
        return transpose(self)

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __matmul__(self, other):
        return matmul(self, other)

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def sum(self):
        return tsum(self)

    def mean(self):
        return tmean(self)

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        """Reverse-mode sweep from a scalar loss to every tracked leaf."""
        if self.data.size != 1:
            raise ContractError("backward requires a scalar loss")
        # Iterative topological sort; graphs can be deeper than the
        # Python recursion limit.
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node.grad)


def _result(data, parents, backward):
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _accumulate(tensor, grad):
    if not tensor.requires_grad:
        return
    if tensor.grad is None:
        tensor.grad = np.zeros_like(tensor.data)
    tensor.grad += grad


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Standard 2-D matrix product with recorded gradient rules."""
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError("matmul expects 2-D operands")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} x {b.shape}")
    _tally(a.shape[0] * a.shape[1] * b.shape[1])
    out_data = a.data @ b.data

    def backward(grad):
        _accumulate(a, grad @ b.data.T)
        _accumulate(b, a.data.T @ grad)

    return _result(out_data, (a, b), backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; a 1-D right operand broadcasts over rows."""
    if b.shape == a.shape:
        broadcast = False
    elif b.data.ndim == 1 and a.data.ndim == 2 and b.shape[0] == a.shape[1]:
        broadcast = True
    else:
        raise ShapeError(f"add shapes incompatible: {a.shape} + {b.shape}")
    out_data = a.data + b.data

    def backward(grad):
        _accumulate(a, grad)
        _accumulate(b, grad.sum(axis=0) if broadcast else grad)

    return _result(out_data, (a, b), backward)


def mul(a: Tensor, b) -> Tensor:
    """Elementwise product with a same-shape tensor or a python scalar."""
    if isinstance(b, Tensor):
        if b.shape != a.shape:
            raise ShapeError(f"mul shapes differ: {a.shape} * {b.shape}")
        out_data = a.data * b.data

        def backward(grad):
            _accumulate(a, grad * b.data)
            _accumulate(b, grad * a.data)

        return _result(out_data, (a, b), backward)

    scalar = float(b)
    out_data = a.data * np.asarray(scalar, dtype=a.dtype)

    def backward_scalar(grad):
        _accumulate(a, grad * scalar)

    return _result(out_data, (a,), backward_scalar)


def transpose(x: Tensor) -> Tensor:
    if x.data.ndim != 2:
        raise ShapeError("transpose expects a 2-D tensor")
    out_data = x.data.T.copy()

    def backward(grad):
        _accumulate(x, grad.T)

    return _result(out_data, (x,), backward)


def tsum(x: Tensor) -> Tensor:
    out_data = x.data.sum()

    def backward(grad):
        _accumulate(x, np.full_like(x.data, grad))

    return _result(out_data, (x,), backward)


def tmean(x: Tensor) -> Tensor:
    n = x.data.size
    out_data = x.data.mean()

    def backward(grad):
        _accumulate(x, np.full_like(x.data, grad / n))

    return _result(out_data, (x,), backward)


def gelu(x: Tensor) -> Tensor:
    """GELU, tanh approximation."""
    c = math.sqrt(2.0 / math.pi)
    inner = c * (x.data + 0.044715 * x.data**3)
    t = np.tanh(inner)
    out_data = 0.5 * x.data * (1.0 + t)

    def backward(grad):
        dinner = c * (1.0 + 3 * 0.044715 * x.data**2)
        local = 0.5 * (1.0 + t) + 0.5 * x.data * (1.0 - t**2) * dinner
        _accumulate(x, grad * local)

    return _result(out_data, (x,), backward)


def sigmoid(x: Tensor) -> Tensor:
    out_data = np.empty_like(x.data)
    pos = x.data >= 0
    out_data[pos] = 1.0 / (1.0 + np.exp(-x.data[pos]))
    expx = np.exp(x.data[~pos])
    out_data[~pos] = expx / (1.0 + expx)

    def backward(grad):
        _accumulate(x, grad * out_data * (1.0 - out_data))

    return _result(out_data, (x,), backward)


def _check_mask(x_data, mask):
    if mask is None:
        return None
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim == 1:
        mask = np.broadcast_to(mask[None, :], x_data.shape)
    if mask.shape != x_data.shape:
        raise ShapeError(f"mask shape {mask.shape} does not match {x_data.shape}")
    if not mask.any(axis=1).all():
        raise MaskError("softmax row is fully masked")
    return mask


def softmax_rows(x: Tensor, mask=None) -> Tensor:
    """Row softmax, stabilized by row-max subtraction.

    ``mask`` is a boolean array (row-shaped or full-shaped) where True
    marks entries that participate; masked entries come out exactly 0.
    A fully masked row raises MaskError rather than returning zeros.
    """
    mask = _check_mask(x.data, mask)
    if mask is None:
        shifted = x.data - x.data.max(axis=1, keepdims=True)
        e = np.exp(shifted)
    else:
        neg = np.array(-np.inf, dtype=x.dtype)
        masked = np.where(mask, x.data, neg)
        shifted = masked - masked.max(axis=1, keepdims=True)
        e = np.where(mask, np.exp(shifted), 0.0).astype(x.dtype)
    out_data = e / e.sum(axis=1, keepdims=True)

    def backward(grad):
        dot = (grad * out_data).sum(axis=1, keepdims=True)
        _accumulate(x, out_data * (grad - dot))

    return _result(out_data, (x,), backward)


def log_softmax_rows(x: Tensor) -> Tensor:
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    out_data = shifted - lse

    def backward(grad):
        soft = np.exp(out_data)
        _accumulate(x, grad - soft * grad.sum(axis=1, keepdims=True))

    return _result(out_data, (x,), backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-row normalization to zero mean / unit variance, then affine."""
    if eps <= 0:
        raise ContractError("layer_norm eps must be positive")
    if x.data.ndim != 2 or gain.shape != (x.shape[1],) or bias.shape != (x.shape[1],):
        raise ShapeError("layer_norm expects x [p,d], gain [d], bias [d]")
    mu = x.data.mean(axis=1, keepdims=True)
    centered = x.data - mu
    var = (centered**2).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    out_data = xhat * gain.data + bias.data

    def backward(grad):
        d = x.shape[1]
        dxhat = grad * gain.data
        # Standard layer-norm backward through mean and variance.
        dx = (
            dxhat
            - dxhat.mean(axis=1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=1, keepdims=True)
        ) * inv
        _accumulate(x, dx)
        _accumulate(gain, (grad * xhat).sum(axis=0))
        _accumulate(bias, grad.sum(axis=0))

    return _result(out_data, (x, gain, bias), backward)


def take_rows(x: Tensor, ids) -> Tensor:
    """Gather rows by index; backward scatter-adds into the source."""
    ids = np.asarray(ids, dtype=np.int64)
    out_data = x.data[ids]

    def backward(grad):
        if x.requires_grad:
            if x.grad is None:
                x.grad = np.zeros_like(x.data)
            np.add.at(x.grad, ids, grad)

    return _result(out_data, (x,), backward)


def pick(x: Tensor, rows, cols) -> Tensor:
    """Select entries x[rows[i], cols[i]] as a 1-D tensor."""
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    out_data = x.data[rows, cols]

    def backward(grad):
        if x.requires_grad:
            if x.grad is None:
                x.grad = np.zeros_like(x.data)
            np.add.at(x.grad, (rows, cols), grad)

    return _result(out_data, (x,), backward)


def slice_cols(x: Tensor, start: int, stop: int) -> Tensor:
    out_data = x.data[:, start:stop].copy()

    def backward(grad):
        if x.requires_grad:
            g = np.zeros_like(x.data)
            g[:, start:stop] = grad
            _accumulate(x, g)

    return _result(out_data, (x,), backward)


def concat_cols(parts) -> Tensor:
    parts = list(parts)
    widths = [p.shape[1] for p in parts]
    out_data = np.concatenate([p.data for p in parts], axis=1)

    def backward(grad):
        offset = 0
        for p, w in zip(parts, widths):
            _accumulate(p, grad[:, offset : offset + w])
            offset += w

    return _result(out_data, tuple(parts), backward)


def conv1d(x: Tensor, weight: Tensor, bias: Tensor, kernel: int, stride: int = 1) -> Tensor:
    """1-D convolution over rows of x [m, c_in].

    ``weight`` is [kernel*c_in, c_out], i.e. an im2col-ready matrix, and
    the input is zero-padded by (kernel-1)//2 rows on each side, so the
    output length is ceil(m / stride).
    """
    m, c_in = x.shape
    if weight.shape[0] != kernel * c_in:
        raise ShapeError("conv1d weight rows must equal kernel * c_in")
    c_out = weight.shape[1]
    pad = (kernel - 1) // 2
    xp = np.zeros((m + 2 * pad, c_in), dtype=x.dtype)
    xp[pad : pad + m] = x.data
    windows = np.lib.stride_tricks.sliding_window_view(xp, kernel, axis=0)
    # windows: [m_out_full, c_in, kernel] -> patches [m_out, kernel*c_in]
    patches = windows[::stride].transpose(0, 2, 1).reshape(-1, kernel * c_in)
    m_out = patches.shape[0]
    _tally(m_out * kernel * c_in * c_out)
    out_data = patches @ weight.data + bias.data

    def backward(grad):
        _accumulate(weight, patches.T @ grad)
        _accumulate(bias, grad.sum(axis=0))
        if x.requires_grad:
            dpatches = (grad @ weight.data.T).reshape(m_out, kernel, c_in)
            dxp = np.zeros_like(xp)
            positions = np.arange(m_out) * stride
            for j in range(kernel):
                np.add.at(dxp, positions + j, dpatches[:, j, :])
            _accumulate(x, dxp[pad : pad + m])

    return _result(out_data, (x, weight, bias), backward)


def finite_diff_check(f, params, step: float = 1e-5, floor: float = 1e-5) -> float:
    """Max relative error of autodiff gradients vs central differences.

    ``f`` is a zero-argument callable returning a scalar Tensor; it must
    close over ``params`` so that perturbing their data changes its
    value. Run the model in float64: central differences are unreliable
    in single precision. ``floor`` bounds the relative-error denominator
    from below; central differences at this step size carry about 1e-11
    of absolute truncation/rounding error, so coordinates whose true
    gradient nearly cancels are compared in absolute terms instead of
    against that noise.
    """
    params = list(params)
    for p in params:
        p.grad = None
    loss = f()
    loss.backward()
    analytic = [
        p.grad.copy() if p.grad is not None else np.zeros_like(p.data) for p in params
    ]
    worst = 0.0
    with no_grad():
        for p, grads in zip(params, analytic):
            flat = p.data.reshape(-1)
            gflat = grads.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + step
                hi = float(f().data)
                flat[i] = orig - step
                lo = float(f().data)
                flat[i] = orig
                numeric = (hi - lo) / (2.0 * step)
                denom = max(abs(gflat[i]), abs(numeric), floor)
                worst = max(worst, abs(gflat[i] - numeric) / denom)
    for p in params:
        p.grad = None
    return worst
