"""Neural layers: linear, multi-head attention, feed-forward, the
convolutional input frontend, dropout and sinusoidal positions.

Layers are thin Module classes over the tensor ops; parameters are
plain Tensors with requires_grad set, discoverable through
``named_parameters`` for the optimizer and the checkpoint writer.
"""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .errors import ShapeError
from .tensor import Tensor


class Module:
    """Minimal parameter container with recursive name discovery."""

    def named_parameters(self):
        out = []
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                out.append((name, value))
            elif isinstance(value, Module):
                out.extend((f"{name}.{sub}", p) for sub, p in value.named_parameters())
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        out.extend(
                            (f"{name}.{i}.{sub}", p)
                            for sub, p in item.named_parameters()
                        )
        return out

    def parameters(self):
        return [p for _, p in self.named_parameters()]


def _uniform_init(rng, shape, fan_in, dtype):
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Linear(Module):
    def __init__(self, in_dim, out_dim, rng, dtype=np.float32, bias=True):
        self.weight = Tensor(_uniform_init(rng, (in_dim, out_dim), in_dim, dtype), requires_grad=True)
        self.bias = Tensor(_uniform_init(rng, (out_dim,), in_dim, dtype), requires_grad=True) if bias else None

    def __call__(self, x):
        out = T.matmul(x, self.weight)
        return out + self.bias if self.bias is not None else out


class LayerNorm(Module):
    def __init__(self, dim, dtype=np.float32, eps=1e-5):
        self.gain = Tensor(np.ones(dim, dtype=dtype), requires_grad=True)
        self.bias = Tensor(np.zeros(dim, dtype=dtype), requires_grad=True)
        self.eps = eps

    def __call__(self, x):
        return T.layer_norm(x, self.gain, self.bias, self.eps)


class FeedForward(Module):
    """linear(d -> hidden), GELU, linear(hidden -> d)."""

    def __init__(self, dim, hidden, rng, dtype=np.float32):
        self.fc1 = Linear(dim, hidden, rng, dtype)
        self.fc2 = Linear(hidden, dim, rng, dtype)

    def __call__(self, x):
        return self.fc2(T.gelu(self.fc1(x)))


class MultiHeadAttention(Module):
    """Scaled dot-product attention with h heads over a shared width d.

    Returns the projected output and the per-head attention weight
    tensors (each [queries, keys]); with h=1 the single weight matrix is
    the cross-attention map consumed by the latent selector.
    """

    def __init__(self, dim, heads, rng, dtype=np.float32):
        if dim % heads != 0:
            raise ShapeError("attention width must be divisible by head count")
        self.dim = dim
        self.heads = heads
        self.wq = Linear(dim, dim, rng, dtype)
        # A key-projection bias shifts every score in a row equally, which
        # softmax cancels exactly; such dead parameters would also fail
        # finite-difference checks, so the K projection carries none.
        self.wk = Linear(dim, dim, rng, dtype, bias=False)
        self.wv = Linear(dim, dim, rng, dtype)
        self.wo = Linear(dim, dim, rng, dtype)

    def __call__(self, q_in, kv_in, key_mask=None, causal=False):
        a, b = q_in.shape[0], kv_in.shape[0]
        mask = None
        if key_mask is not None:
            mask = np.broadcast_to(np.asarray(key_mask, dtype=bool)[None, :], (a, b)).copy()
        if causal:
            causal_mask = np.tril(np.ones((a, b), dtype=bool))
            mask = causal_mask if mask is None else mask & causal_mask

        q = self.wq(q_in)
        k = self.wk(kv_in)
        v = self.wv(kv_in)
        head_dim = self.dim // self.heads
        scale = 1.0 / math.sqrt(head_dim)
        contexts = []
        weights = []
        for h in range(self.heads):
            lo, hi = h * head_dim, (h + 1) * head_dim
            qh = T.slice_cols(q, lo, hi)
            kh = T.slice_cols(k, lo, hi)
            vh = T.slice_cols(v, lo, hi)
            scores = T.matmul(qh, T.transpose(kh)) * scale
            w = T.softmax_rows(scores, mask)
            weights.append(w)
            contexts.append(T.matmul(w, vh))
        ctx = contexts[0] if self.heads == 1 else T.concat_cols(contexts)
        return self.wo(ctx), weights


class ConvInputProcessor(Module):
    """Two GLU-gated 1-D convolutions over the time axis.

    ``channels`` counts post-GLU channels, so each convolution emits
    twice that many and the gate halves them. Stride (1, 1) preserves
    the sequence length; (2, 2) down-samples by 4 with ceil division.
    """

    def __init__(self, freq_bins, dim, channels, kernel, strides, rng, dtype=np.float32):
        self.kernel = kernel
        self.strides = tuple(strides)
        self.channels = channels
        self.w1 = Tensor(
            _uniform_init(rng, (kernel * freq_bins, 2 * channels), kernel * freq_bins, dtype),
            requires_grad=True,
        )
        self.b1 = Tensor(np.zeros(2 * channels, dtype=dtype), requires_grad=True)
        self.w2 = Tensor(
            _uniform_init(rng, (kernel * channels, 2 * dim), kernel * channels, dtype),
            requires_grad=True,
        )
        self.b2 = Tensor(np.zeros(2 * dim, dtype=dtype), requires_grad=True)

    def output_length(self, m):
        for s in self.strides:
            m = -(-m // s)
        return m

    def __call__(self, x):
        if x.shape[0] < self.kernel:
            raise ShapeError(
                f"sequence of {x.shape[0]} frames is shorter than kernel {self.kernel}"
            )
        h = glu(T.conv1d(x, self.w1, self.b1, self.kernel, self.strides[0]))
        return glu(T.conv1d(h, self.w2, self.b2, self.kernel, self.strides[1]))


def glu(x):
    """Gated linear unit: first channel half gated by sigmoid of the second."""
    half = x.shape[1] // 2
    return T.slice_cols(x, 0, half) * T.sigmoid(T.slice_cols(x, half, 2 * half))


def sinusoidal_positions(length, dim, dtype=np.float32):
    """Fixed sin/cos position table; position 0 is (0, 1, 0, 1, ...)."""
    if dim % 2 != 0:
        raise ShapeError("sinusoidal positions require an even dimensionality")
    positions = np.arange(length, dtype=np.float64)[:, None]
    dims = np.arange(0, dim, 2, dtype=np.float64)[None, :]
    angles = positions / np.power(10000.0, dims / dim)
    table = np.zeros((length, dim), dtype=np.float64)
    table[:, 0::2] = np.sin(angles)
    table[:, 1::2] = np.cos(angles)
    return table.astype(dtype)


def dropout(x, rate, training, rng):
    """Inverted dropout: survivors scaled by 1/(1-rate); identity at inference."""
    if not training or rate == 0.0:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * Tensor(keep.astype(x.dtype))


class InputFrontend(Module):
    """Maps a spectrogram [m, c] to model space [m', d] plus positions.

    With the convolutional processor enabled this is conv stack then
    sinusoidal positions; disabled, a single linear projection stands
    in. The processed input is deliberately NOT scaled by sqrt(d).
    """

    def __init__(self, freq_bins, dim, channels, kernel, strides, use_processor, rng, dtype=np.float32):
        self.dim = dim
        self.use_processor = use_processor
        self.dtype = dtype
        if use_processor:
            self.processor = ConvInputProcessor(freq_bins, dim, channels, kernel, strides, rng, dtype)
        else:
            self.projection = Linear(freq_bins, dim, rng, dtype)
        self._position_cache = {}

    def output_length(self, m):
        return self.processor.output_length(m) if self.use_processor else m

    def _positions(self, length):
        if length not in self._position_cache:
            self._position_cache[length] = Tensor(
                sinusoidal_positions(length, self.dim, self.dtype)
            )
        return self._position_cache[length]

    def __call__(self, spectrogram):
        if self.use_processor:
            h = self.processor(spectrogram)
        else:
            h = self.projection(spectrogram)
        return h + self._positions(h.shape[0])
