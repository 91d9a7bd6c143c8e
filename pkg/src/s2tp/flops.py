"""Analytic FLOP cost model for the perceiver model and its transformer
baseline, over single examples or corpora of (source frames, target
tokens) lengths.

Conventions: 2 FLOPs per multiply-add; only matrix products and
convolutions are counted (softmax, layer norm, activations, residual
adds and the latent selection itself are free). The decoder is costed
as one full-sequence teacher-forced pass, i.e. no batching and no beam
search. For the perceiver, cross-attention always runs over all n
latents; self-attention and the decoder's cross-attention see only the
k' selected ones.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError

COMPONENTS = (
    "input_processor",
    "encoder_cross_attention",
    "encoder_self_attention",
    "decoder",
    "output_projection",
)


@dataclass
class ModelSpec:
    """Sizes needed to cost one model family."""

    family: str = "perceiver"  # "perceiver" | "transformer"
    d: int = 64
    heads: int = 4
    ffn_hidden: int = 256
    self_attn_layers: int = 4  # encoder self-attention (or transformer encoder) layers
    decoder_layers: int = 2
    freq_bins: int = 16
    use_input_processor: bool = True
    conv_channels: int = 32
    conv_kernel: int = 5
    conv_strides: tuple = (1, 1)
    n_latents: int = 64
    k_prime: int = 64
    vocab: int = 19

    def __post_init__(self):
        if self.family not in ("perceiver", "transformer"):
            raise ContractError(f"unknown model family: {self.family}")
        if self.family == "perceiver" and self.k_prime > self.n_latents:
            raise ContractError("k' must not exceed the latent count n")


@dataclass
class CostReport:
    """Per-component FLOP totals; components always sum to the total."""

    components: dict = field(default_factory=dict)
    ratio: float | None = None

    @property
    def total(self):
        return sum(self.components.values())


def attention_flops(queries, keys, d):
    """Q/O projections on the query side, K/V on the key side, plus the
    score and weighted-sum products."""
    projections = 4 * queries * d * d + 4 * keys * d * d
    scores = 2 * queries * keys * d
    weighted_sum = 2 * queries * keys * d
    return projections + scores + weighted_sum


def ffn_flops(rows, d, hidden):
    return 4 * rows * d * hidden


def conv_output_length(m, strides):
    for s in strides:
        m = -(-m // s)
    return m


def _input_processor_flops(spec, m):
    if not spec.use_input_processor:
        return 2 * m * spec.freq_bins * spec.d, m
    w, ch = spec.conv_kernel, spec.conv_channels
    m1 = conv_output_length(m, spec.conv_strides[:1])
    m2 = conv_output_length(m, spec.conv_strides)
    # GLU convolutions emit twice their post-gate channel count.
    layer1 = 2 * m1 * w * spec.freq_bins * (2 * ch)
    layer2 = 2 * m2 * w * ch * (2 * spec.d)
    return layer1 + layer2, m2


def cost(spec: ModelSpec, m: int, t: int) -> CostReport:
    """FLOPs of one inference pass over m source frames and t decoding
    positions."""
    if m < 1 or t < 1:
        raise ContractError("need m >= 1 and t >= 1")
    d, f = spec.d, spec.ffn_hidden
    processor, frames = _input_processor_flops(spec, m)
    if spec.family == "perceiver":
        n, k = spec.n_latents, spec.k_prime
        cross = attention_flops(n, frames, d) + ffn_flops(n, d, f)
        self_attn = spec.self_attn_layers * (attention_flops(k, k, d) + ffn_flops(k, d, f))
        memory = k
    else:
        cross = 0
        self_attn = spec.self_attn_layers * (
            attention_flops(frames, frames, d) + ffn_flops(frames, d, f)
        )
        memory = frames
    decoder = spec.decoder_layers * (
        attention_flops(t, t, d) + attention_flops(t, memory, d) + ffn_flops(t, d, f)
    )
    projection = 2 * t * d * spec.vocab
    return CostReport(
        components={
            "input_processor": processor,
            "encoder_cross_attention": cross,
            "encoder_self_attention": self_attn,
            "decoder": decoder,
            "output_projection": projection,
        }
    )


def corpus_total(spec: ModelSpec, lengths) -> int:
    lengths = list(lengths)
    if not lengths:
        raise ContractError("empty corpus")
    return sum(cost(spec, m, t).total for m, t in lengths)


def corpus_ratio(spec: ModelSpec, baseline: ModelSpec, lengths) -> float:
    """Total FLOPs of spec over a corpus divided by the baseline's."""
    lengths = list(lengths)
    return corpus_total(spec, lengths) / corpus_total(baseline, lengths)


def default_lengths(count=128, seed=0):
    """Synthetic speech-like report corpus: m uniform in [200, 3000]
    frames (~30 s cap), roughly 30 frames per target token."""
    rng = np.random.default_rng(seed)
    ms = rng.integers(200, 3001, size=count)
    return [(int(m), int(round(m / 30))) for m in ms]


def read_lengths(path):
    """Lengths file: one ``m t`` pair per line, '#' comments ignored."""
    lengths = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ContractError(f"{path}:{lineno}: expected 'm t', got {line!r}")
            lengths.append((int(parts[0]), int(parts[1])))
    if not lengths:
        raise ContractError(f"{path}: no length pairs found")
    return lengths


def format_report(spec_totals: dict, baseline_totals: dict | None = None) -> str:
    """Tab-separated component table, one row per component plus total."""
    lines = []
    header = ["component", "flops"]
    if baseline_totals is not None:
        header += ["baseline_flops", "ratio"]
    lines.append("\t".join(header))
    keys = list(COMPONENTS) + ["total"]
    spec_totals = dict(spec_totals)
    spec_totals["total"] = sum(spec_totals.get(c, 0) for c in COMPONENTS)
    if baseline_totals is not None:
        baseline_totals = dict(baseline_totals)
        baseline_totals["total"] = sum(baseline_totals.get(c, 0) for c in COMPONENTS)
    for key in keys:
        row = [key, str(spec_totals.get(key, 0))]
        if baseline_totals is not None:
            base = baseline_totals.get(key, 0)
            ratio = spec_totals.get(key, 0) / base if base else float("inf")
            row += [str(base), f"{ratio:.4f}"]
        lines.append("\t".join(row))
    return "\n".join(lines)
