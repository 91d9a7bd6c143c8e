"""Finite-difference gradient report over every layer type and the
full encoder-decoder loss, run in float64 at small shapes."""

from __future__ import annotations

import numpy as np

from . import config as config_mod
from . import nn
from . import tensor as T
from .model import build_network
from .tensor import Tensor, finite_diff_check


def _rng():
    return np.random.default_rng(7)


def _layer_checks(dim):
    rng = _rng()
    x_data = rng.standard_normal((3, dim))

    linear = nn.Linear(dim, dim, rng, np.float64)
    yield "linear", lambda: T.tsum(linear(Tensor(x_data))), linear.parameters()

    norm = nn.LayerNorm(dim, np.float64)
    yield "layer_norm", lambda: T.tsum(norm(Tensor(x_data))), norm.parameters()

    ffn = nn.FeedForward(dim, 2 * dim, rng, np.float64)
    yield "feed_forward", lambda: T.tsum(ffn(Tensor(x_data))), ffn.parameters()

    attn = nn.MultiHeadAttention(dim, 2, rng, np.float64)
    kv_data = rng.standard_normal((4, dim))
    mask = np.array([True, True, False, True])

    def attn_loss():
        out, _ = attn(Tensor(x_data), Tensor(kv_data), key_mask=mask)
        return T.tsum(out)

    yield "attention", attn_loss, attn.parameters()

    conv = nn.ConvInputProcessor(dim, dim, 3, 5, (1, 1), rng, np.float64)
    spec_data = rng.standard_normal((6, dim))
    yield "conv_input_processor", lambda: T.tsum(conv(Tensor(spec_data))), conv.parameters()

    # Weight the softmax output; its plain sum is constant 1 per row and
    # would only compare rounding noise.
    x_leaf = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
    coeff = Tensor(rng.standard_normal((3, 4)))
    yield "softmax_rows", lambda: T.tsum(
        T.softmax_rows(x_leaf * 1.0, np.array([True, True, True, False])) * coeff
    ), [x_leaf]

    g_leaf = Tensor(rng.standard_normal((2, 5)), requires_grad=True)
    yield "gelu", lambda: T.tsum(T.gelu(g_leaf * 1.0)), [g_leaf]


def _full_model_check(dim):
    cfg = config_mod.defaults()
    cfg.update(
        d=dim, heads=2, self_attn_layers=1, decoder_layers=1, ffn_hidden=2 * dim,
        n_latents=3, vocab=4, freq_bins=3, conv_channels=2, conv_kernel=5,
        dropout=0.0, t_max=4,
    )
    net = build_network(cfg, dtype=np.float64, seed=11)
    rng = _rng()
    source = rng.standard_normal((6, cfg["freq_bins"]))
    tokens = [1, 3]

    def loss():
        return net.forward_loss(source, tokens)

    return "full_model", loss, net.parameters()


def full_report(dim=16, step=1e-5):
    """Yield (name, max relative error) for every check."""
    for name, loss, params in _layer_checks(dim):
        yield name, finite_diff_check(loss, params, step)
    name, loss, params = _full_model_check(dim)
    yield name, finite_diff_check(loss, params, step)
