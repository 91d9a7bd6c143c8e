"""Perceiver encoder: learned latent array, single-head cross-attention
from latents onto the processed input, then a stack of self-attention
layers, all pre-LN.

The encoder is split into two stages so that inference-time latent
selection can sit between them: ``cross_stage`` produces the latent
representation and the cross-attention weight matrix, ``self_stage``
runs the self-attention layers over whichever latent rows survive.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from . import tensor as T
from .nn import Module
from .tensor import Tensor


def truncated_normal(rng, shape, std=0.05, bound=2.0):
    """Normal(0, std) samples with |z| > bound resampled, not clipped."""
    out = rng.standard_normal(shape)
    bad = np.abs(out) > bound
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > bound
    return out * std


@dataclass
class EncoderOutput:
    """Latent representation Z [k, d], cross-attention weights A [k, m']
    and the frame validity mask the weights were computed under."""

    Z: Tensor
    A: Tensor
    frame_mask: np.ndarray | None


class SelfAttentionBlock(Module):
    """Pre-LN self-attention + feed-forward with residuals."""

    def __init__(self, dim, heads, ffn_hidden, dropout_rate, rng, dtype=np.float32):
        self.norm1 = nn.LayerNorm(dim, dtype)
        self.attn = nn.MultiHeadAttention(dim, heads, rng, dtype)
        self.norm2 = nn.LayerNorm(dim, dtype)
        self.ffn = nn.FeedForward(dim, ffn_hidden, rng, dtype)
        self.dropout_rate = dropout_rate

    def __call__(self, h, training=False, rng=None):
        normed = self.norm1(h)
        attn_out, _ = self.attn(normed, normed)
        h = h + nn.dropout(attn_out, self.dropout_rate, training, rng)
        ffn_out = self.ffn(self.norm2(h))
        return h + nn.dropout(ffn_out, self.dropout_rate, training, rng)


class PerceiverEncoder(Module):
    """n learned latents, one single-head cross-attention block, then
    self_attn_layers pre-LN self-attention blocks over the latents."""

    def __init__(self, dim, n_latents, self_attn_layers, heads, ffn_hidden,
                 dropout_rate, rng, dtype=np.float32):
        self.n_latents = n_latents
        self.latents = Tensor(
            truncated_normal(rng, (n_latents, dim)).astype(dtype), requires_grad=True
        )
        self.latent_norm = nn.LayerNorm(dim, dtype)
        self.input_norm = nn.LayerNorm(dim, dtype)
        # Cross-attention is single-headed, so its head dim is the full d.
        self.cross_attn = nn.MultiHeadAttention(dim, 1, rng, dtype)
        self.cross_ffn_norm = nn.LayerNorm(dim, dtype)
        self.cross_ffn = nn.FeedForward(dim, ffn_hidden, rng, dtype)
        self.self_layers = [
            SelfAttentionBlock(dim, heads, ffn_hidden, dropout_rate, rng, dtype)
            for _ in range(self_attn_layers)
        ]
        self.final_norm = nn.LayerNorm(dim, dtype)

    def _check_ids(self, latent_ids):
        ids = np.asarray(latent_ids, dtype=np.int64)
        if ids.ndim != 1 or len(np.unique(ids)) != len(ids):
            raise IndexError("latent ids must be a flat list of distinct indices")
        if ids.size == 0 or ids.min() < 0 or ids.max() >= self.n_latents:
            raise IndexError(f"latent ids out of range [0, {self.n_latents})")
        return ids

    def cross_stage(self, x, frame_mask=None, latent_ids=None):
        """Cross-attention block over the selected latents.

        Returns (Z [k, d], A [k, m']): the post-FFN latent representation
        and the attention weight rows of the selected latents. Latent
        queries do not interact here, so each output row depends only on
        its own latent.
        """
        if latent_ids is None:
            latent_ids = np.arange(self.n_latents)
        ids = self._check_ids(latent_ids)
        selected = T.take_rows(self.latents, ids)
        attn_out, weights = self.cross_attn(
            self.latent_norm(selected), self.input_norm(x), key_mask=frame_mask
        )
        z = selected + attn_out
        z = z + self.cross_ffn(self.cross_ffn_norm(z))
        return z, weights[0]

    def self_stage(self, z, training=False, rng=None):
        for layer in self.self_layers:
            z = layer(z, training, rng)
        return self.final_norm(z)

    def encode(self, x, frame_mask=None, latent_ids=None, training=False, rng=None):
        z, attn = self.cross_stage(x, frame_mask, latent_ids)
        z = self.self_stage(z, training, rng)
        return EncoderOutput(Z=z, A=attn, frame_mask=frame_mask)


def complexity(n_or_k: int, m: int, self_attn_layers: int) -> dict:
    """Dominant asymptotic terms of the encoder: linear cross-attention
    term n*m and quadratic self-attention term mu*n^2."""
    if n_or_k <= 0 or m <= 0 or self_attn_layers < 0:
        raise ValueError("complexity expects positive sizes")
    return {
        "cross": n_or_k * m,
        "self": self_attn_layers * n_or_k * n_or_k,
    }
