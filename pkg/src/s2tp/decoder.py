"""Transformer decoder over the (possibly subselected) latent
representation: teacher-forced label-smoothed loss and greedy/beam
generation.

Token ids: 0 = PAD, 1 = BOS, 2 = EOS, content tokens start at 3.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import nn
from . import tensor as T
from .errors import ContractError
from .nn import Module
from .tensor import Tensor

PAD, BOS, EOS = 0, 1, 2
SPECIAL_TOKENS = 3


@dataclass
class GenerationConfig:
    beam: int = 1
    max_len: int = 64


@dataclass
class GenerationResult:
    tokens: list  # content tokens, specials stripped
    score: float  # cumulative log-probability
    truncated: bool


class DecoderLayer(Module):
    def __init__(self, dim, heads, ffn_hidden, dropout_rate, rng, dtype=np.float32):
        self.norm1 = nn.LayerNorm(dim, dtype)
        self.self_attn = nn.MultiHeadAttention(dim, heads, rng, dtype)
        self.norm2 = nn.LayerNorm(dim, dtype)
        self.cross_attn = nn.MultiHeadAttention(dim, heads, rng, dtype)
        self.norm3 = nn.LayerNorm(dim, dtype)
        self.ffn = nn.FeedForward(dim, ffn_hidden, rng, dtype)
        self.dropout_rate = dropout_rate

    def __call__(self, x, z, training=False, rng=None):
        normed = self.norm1(x)
        attn_out, _ = self.self_attn(normed, normed, causal=True)
        x = x + nn.dropout(attn_out, self.dropout_rate, training, rng)
        cross_out, _ = self.cross_attn(self.norm2(x), z)
        x = x + nn.dropout(cross_out, self.dropout_rate, training, rng)
        ffn_out = self.ffn(self.norm3(x))
        return x + nn.dropout(ffn_out, self.dropout_rate, training, rng)


class TransformerDecoder(Module):
    """Pre-LN decoder stack with token embeddings scaled by sqrt(d)."""

    def __init__(self, vocab, dim, layers, heads, ffn_hidden, dropout_rate, rng,
                 dtype=np.float32):
        self.vocab = vocab
        self.dim = dim
        self.embedding = Tensor(
            nn._uniform_init(rng, (vocab, dim), dim, dtype), requires_grad=True
        )
        self.layers = [
            DecoderLayer(dim, heads, ffn_hidden, dropout_rate, rng, dtype)
            for _ in range(layers)
        ]
        self.final_norm = nn.LayerNorm(dim, dtype)
        self.out_proj = nn.Linear(dim, vocab, rng, dtype)
        self.dropout_rate = dropout_rate
        self.dtype = dtype
        self._position_cache = {}

    def _positions(self, length):
        if length not in self._position_cache:
            self._position_cache[length] = Tensor(
                nn.sinusoidal_positions(length, self.dim, self.dtype)
            )
        return self._position_cache[length]

    def hidden_states(self, tokens, z, training=False, rng=None):
        """Run the stack over a token prefix; returns [len(tokens), d]."""
        tokens = np.asarray(tokens, dtype=np.int64)
        x = T.take_rows(self.embedding, tokens) * math.sqrt(self.dim)
        x = x + self._positions(len(tokens))
        x = nn.dropout(x, self.dropout_rate, training, rng)
        for layer in self.layers:
            x = layer(x, z, training, rng)
        return self.final_norm(x)

    def project(self, hidden):
        return self.out_proj(hidden)

    def forward(self, tokens, z, training=False, rng=None):
        return self.project(self.hidden_states(tokens, z, training, rng))

    def loss(self, z, targets, smoothing=0.1, training=False, rng=None):
        """Mean label-smoothed cross-entropy under teacher forcing.

        ``targets`` must start with BOS and end with EOS; with smoothing
        eps the per-position loss is (1-eps)*nll + eps*mean_v(-log p_v).
        """
        targets = list(targets)
        if len(targets) < 2 or targets[0] != BOS or targets[-1] != EOS:
            raise ContractError("targets must be [BOS, ..., EOS] with length >= 2")
        if not 0.0 <= smoothing < 1.0:
            raise ContractError("smoothing must be in [0, 1)")
        inputs, gold = targets[:-1], targets[1:]
        logits = self.forward(inputs, z, training, rng)
        logp = T.log_softmax_rows(logits)
        nll = -T.tmean(T.pick(logp, np.arange(len(gold)), gold))
        smooth = -T.tmean(logp)
        return nll * (1.0 - smoothing) + smooth * smoothing

    def generate(self, z, config: GenerationConfig) -> GenerationResult:
        """Beam search by cumulative log-probability, no length penalty.

        beam=1 is plain greedy decoding. If no hypothesis finishes
        within max_len steps, the best unfinished one is returned with
        the truncation flag set.
        """
        if config.beam < 1:
            raise ContractError("beam width must be >= 1")
        with T.no_grad():
            return self._search(z, config)

    def _search(self, z, config):
        beams = [([BOS], 0.0)]
        finished = []
        for _ in range(config.max_len):
            candidates = []
            for tokens, score in beams:
                logits = self.forward(tokens, z)
                row = logits.data[-1]
                row = row - row.max()
                logp = row - math.log(np.exp(row).sum())
                order = np.argsort(-logp, kind="stable")[: config.beam]
                for tok in order:
                    candidates.append((tokens + [int(tok)], score + float(logp[tok])))
            candidates.sort(key=lambda c: (-c[1], c[0]))
            beams = []
            for tokens, score in candidates:
                if tokens[-1] == EOS:
                    finished.append((tokens, score))
                else:
                    beams.append((tokens, score))
                if len(beams) >= config.beam:
                    break
            if not beams:
                break
            if finished and max(s for _, s in finished) >= beams[0][1]:
                # No unfinished hypothesis can overtake the best finished
                # one (log-probs only decrease).
                break
        if finished:
            tokens, score = max(finished, key=lambda c: c[1])
            return GenerationResult(_strip(tokens), score, truncated=False)
        tokens, score = beams[0]
        return GenerationResult(_strip(tokens), score, truncated=True)


def _strip(tokens):
    return [t for t in tokens if t >= SPECIAL_TOKENS]
