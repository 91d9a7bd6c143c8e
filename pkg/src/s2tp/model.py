"""Model assembly and the estimator-style public interface.

``PerceiverS2TNetwork`` wires the convolutional frontend, the Perceiver
encoder and the Transformer decoder into one parameter tree.
``SpeechToTextPerceiver`` wraps it in a fit/predict/score estimator with
get_params/set_params, so it composes like any other estimator.
"""

from __future__ import annotations

import inspect

import numpy as np

from . import dla
from . import flops as flops_mod
from . import tensor as T
from .decoder import BOS, EOS, SPECIAL_TOKENS, GenerationConfig, TransformerDecoder
from .errors import ContractError, ShapeError
from .nn import InputFrontend, Module
from .perceiver import PerceiverEncoder
from .tensor import Tensor


def check_spectrogram(x, freq_bins):
    """Validate one input: 2-D float array with the configured bins."""
    arr = np.asarray(x)
    if arr.ndim != 2 or arr.shape[1] != freq_bins:
        raise ShapeError(f"expected a [frames, {freq_bins}] spectrogram, got {arr.shape}")
    if arr.shape[0] < 1:
        raise ShapeError("spectrogram has no frames")
    return arr.astype(np.float32, copy=False)


def check_tokens(y, vocab):
    """Validate one target: non-empty content token ids in [0, vocab)."""
    tokens = [int(t) for t in y]
    if not tokens:
        raise ContractError("target sequence is empty")
    if any(t < 0 or t >= vocab for t in tokens):
        raise ContractError(f"target tokens must lie in [0, {vocab})")
    return tokens


def to_target(tokens):
    return [BOS] + [t + SPECIAL_TOKENS for t in tokens] + [EOS]


class PerceiverS2TNetwork(Module):
    """Frontend + Perceiver encoder + Transformer decoder."""

    def __init__(self, cfg: dict, rng, dtype=np.float32):
        self.cfg = dict(cfg)
        self.dtype = dtype
        d = cfg["d"]
        stride = cfg["conv_stride"]
        self.frontend = InputFrontend(
            cfg["freq_bins"], d, cfg["conv_channels"], cfg["conv_kernel"],
            (stride, stride), cfg["use_input_processor"], rng, dtype,
        )
        self.encoder = PerceiverEncoder(
            d, cfg["n_latents"], cfg["self_attn_layers"], cfg["heads"],
            cfg["ffn_hidden"], cfg["dropout"], rng, dtype,
        )
        self.decoder = TransformerDecoder(
            cfg["vocab"] + SPECIAL_TOKENS, d, cfg["decoder_layers"], cfg["heads"],
            cfg["ffn_hidden"], cfg["dropout"], rng, dtype,
        )

    @property
    def n_latents(self):
        return self.cfg["n_latents"]

    def default_max_len(self):
        if self.cfg.get("max_len"):
            return self.cfg["max_len"]
        return self.cfg["t_max"] + 2

    def forward_loss(self, spectrogram, tokens, latent_ids=None, training=False, rng=None):
        """Teacher-forced label-smoothed loss for one example."""
        x = self.frontend(Tensor(np.asarray(spectrogram, dtype=self.dtype)))
        out = self.encoder.encode(x, latent_ids=latent_ids, training=training, rng=rng)
        return self.decoder.loss(
            out.Z, to_target(tokens), self.cfg["label_smoothing"], training, rng
        )

    def encode_with_selection(self, spectrogram, mode="full", k_prime=None, rng=None):
        """Encode one example, applying inference-time latent selection.

        mode "full" uses every latent; "diverse" and "random" run
        cross-attention over all n latents and select k' of them before
        the self-attention stack.
        """
        x = self.frontend(Tensor(np.asarray(spectrogram, dtype=self.dtype)))
        z_cross, attn = self.encoder.cross_stage(x)
        if mode == "full":
            return self.encoder.self_stage(z_cross)
        if k_prime is None:
            raise ContractError("k_prime is required for diverse/random selection")
        if mode == "diverse":
            sel = dla.select_diverse(z_cross, attn, k_prime)
        elif mode == "random":
            if rng is None:
                rng = np.random.default_rng(0)
            sel = dla.select_random(z_cross, k_prime, rng)
        else:
            raise ContractError(f"unknown selection mode: {mode}")
        return self.encoder.self_stage(Tensor(sel.latents))

    def transcribe(self, spectrogram, mode="full", k_prime=None, beam=1,
                   max_len=None, rng=None):
        """Decode one spectrogram to content tokens."""
        with T.no_grad():
            z = self.encode_with_selection(spectrogram, mode, k_prime, rng)
        cfg = GenerationConfig(beam=beam, max_len=max_len or self.default_max_len())
        return self.decoder.generate(z, cfg)

    def model_spec(self, k_prime=None) -> flops_mod.ModelSpec:
        cfg = self.cfg
        stride = cfg["conv_stride"]
        return flops_mod.ModelSpec(
            family="perceiver",
            d=cfg["d"],
            heads=cfg["heads"],
            ffn_hidden=cfg["ffn_hidden"],
            self_attn_layers=cfg["self_attn_layers"],
            decoder_layers=cfg["decoder_layers"],
            freq_bins=cfg["freq_bins"],
            use_input_processor=cfg["use_input_processor"],
            conv_channels=cfg["conv_channels"],
            conv_kernel=cfg["conv_kernel"],
            conv_strides=(stride, stride),
            n_latents=cfg["n_latents"],
            k_prime=k_prime or cfg["n_latents"],
            vocab=cfg["vocab"] + SPECIAL_TOKENS,
        )

    def state_tensors(self):
        """Named float32 parameter arrays, checkpoint-ready."""
        return {name: p.data.astype("<f4") for name, p in self.named_parameters()}

    def load_state(self, tensors):
        from .errors import CheckpointError

        params = dict(self.named_parameters())
        if set(params) != set(tensors):
            missing = set(params) ^ set(tensors)
            raise CheckpointError(f"parameter names do not match: {sorted(missing)[:4]}")
        for name, p in params.items():
            arr = tensors[name]
            if tuple(arr.shape) != tuple(p.shape):
                raise CheckpointError(f"shape mismatch for {name}: {arr.shape} vs {p.shape}")
            p.data = arr.astype(self.dtype)


def build_network(cfg: dict, dtype=np.float32, seed=None) -> PerceiverS2TNetwork:
    rng = np.random.default_rng(cfg["seed"] if seed is None else seed)
    return PerceiverS2TNetwork(cfg, rng, dtype)


class SpeechToTextPerceiver:
    """Sequence-to-sequence estimator over spectrogram inputs.

    X is a list of [frames, freq_bins] arrays, y a list of content-token
    sequences (ids in [0, vocab)). ``fit`` trains with random latent
    subsampling (k = train_latents per example); ``predict`` decodes,
    optionally through diversity-based or random latent selection.
    """

    def __init__(self, d=64, heads=4, self_attn_layers=4, decoder_layers=2,
                 ffn_hidden=256, n_latents=64, train_latents=16, vocab=16,
                 freq_bins=16, conv_channels=32, conv_kernel=5, conv_stride=1,
                 use_input_processor=True, dropout=0.15, label_smoothing=0.1,
                 lr=0.002, warmup_steps=500, batch_size=16, max_epochs=10,
                 patience=15, stop_accuracy=0.995, beam=1, max_len=0, seed=0):
        args = locals()
        for name in self._param_names():
            setattr(self, name, args[name])

    @classmethod
    def _param_names(cls):
        return [p for p in inspect.signature(cls.__init__).parameters if p != "self"]

    def get_params(self, deep=True):
        return {name: getattr(self, name) for name in self._param_names()}

    def set_params(self, **params):
        for name, value in params.items():
            if name not in self._param_names():
                raise ValueError(f"invalid parameter {name!r} for SpeechToTextPerceiver")
            setattr(self, name, value)
        return self

    def _config(self):
        from . import config as config_mod

        cfg = config_mod.defaults()
        for name in self._param_names():
            if name in cfg:
                cfg[name] = getattr(self, name)
        return cfg

    def fit(self, X, y, X_valid=None, y_valid=None):
        from . import harness

        cfg = self._config()
        data = [
            (check_spectrogram(x, self.freq_bins), check_tokens(t, self.vocab))
            for x, t in zip(X, y)
        ]
        if X_valid is None:
            split = max(1, len(data) // 10)
            valid, train = data[:split], data[split:]
        else:
            train = data
            valid = [
                (check_spectrogram(x, self.freq_bins), check_tokens(t, self.vocab))
                for x, t in zip(X_valid, y_valid)
            ]
        self.network_ = build_network(cfg)
        result = harness.train(self.network_, train, valid, harness.TrainConfig.from_config(cfg))
        self.history_ = result.metrics
        return self

    def _require_fitted(self):
        if not hasattr(self, "network_"):
            raise ContractError("estimator is not fitted; call fit first")

    def predict(self, X, dla_mode="full", k_prime=None, beam=None, seed=0):
        self._require_fitted()
        rng = np.random.default_rng(seed)
        out = []
        for x in X:
            x = check_spectrogram(x, self.freq_bins)
            result = self.network_.transcribe(
                x, mode=dla_mode, k_prime=k_prime, beam=beam or self.beam, rng=rng
            )
            out.append([t - SPECIAL_TOKENS for t in result.tokens])
        return out

    def score(self, X, y, **predict_kwargs):
        """Mean per-position token accuracy against y."""
        from . import harness

        predictions = self.predict(X, **predict_kwargs)
        return harness.token_accuracy(predictions, [list(t) for t in y])
