"""Synthetic training harness: toy dataset generator, inverse-sqrt
schedule, AdamW, the training loop with per-example latent subsampling,
evaluation metrics and checkpoint averaging.

The toy task substitutes for real speech: each content token owns a
fixed random feature pattern; a source "spectrogram" is each target
token's pattern repeated frames_per_token times plus Gaussian noise,
and the target is the token sequence itself (copy) or its reversal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import dla
from .errors import ContractError, DivergenceError
from .tensor import Tensor


@dataclass
class ToyTask:
    vocab: int = 16
    t_min: int = 5
    t_max: int = 20
    frames_per_token: int = 8
    freq_bins: int = 16
    noise_std: float = 0.1
    mode: str = "copy"  # "copy" | "reverse"
    seed: int = 0

    @classmethod
    def from_config(cls, cfg):
        return cls(
            vocab=cfg["vocab"], t_min=cfg["t_min"], t_max=cfg["t_max"],
            frames_per_token=cfg["frames_per_token"], freq_bins=cfg["freq_bins"],
            noise_std=cfg["noise_std"], mode=cfg["task_mode"], seed=cfg["seed"],
        )

    def patterns(self):
        rng = np.random.default_rng((self.seed, 0xF))
        return rng.standard_normal((self.vocab, self.freq_bins)).astype(np.float32)


def generate_dataset(task: ToyTask, count: int, split: int = 0):
    """Deterministic list of (spectrogram [m, c], content tokens).

    ``split`` separates the rng streams of e.g. train and validation
    sets drawn from the same task.
    """
    if task.mode not in ("copy", "reverse"):
        raise ContractError(f"unknown task mode: {task.mode}")
    patterns = task.patterns()
    rng = np.random.default_rng((task.seed, split))
    examples = []
    for _ in range(count):
        t = int(rng.integers(task.t_min, task.t_max + 1))
        tokens = rng.integers(0, task.vocab, size=t)
        source = np.repeat(patterns[tokens], task.frames_per_token, axis=0)
        source = source + rng.normal(0.0, task.noise_std, size=source.shape)
        targets = tokens[::-1] if task.mode == "reverse" else tokens
        examples.append((source.astype(np.float32), [int(x) for x in targets]))
    return examples


def lr_schedule(step: int, base: float, warmup: int) -> float:
    """Linear warm-up to ``base`` at step == warmup, then step^-1/2 decay."""
    if step < 1:
        raise ContractError("schedule steps start at 1")
    return base * min(step / warmup, math.sqrt(warmup / step))


class AdamW:
    """Adam with decoupled weight decay."""

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.98), eps=1e-8, weight_decay=0.01):
        self.params = list(params)
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        self.t += 1
        b1, b2 = self.betas
        bias1 = 1.0 - b1**self.t
        bias2 = 1.0 - b2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad.astype(np.float32)
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            update = (m / bias1) / (np.sqrt(v / bias2) + self.eps)
            p.data -= (self.lr * (update + self.weight_decay * p.data)).astype(p.dtype)


@dataclass
class TrainConfig:
    train_latents: int = 16
    lr: float = 0.002
    warmup_steps: int = 500
    batch_size: int = 16
    max_epochs: int = 10
    patience: int = 15
    stop_accuracy: float = 0.995
    seed: int = 0

    @classmethod
    def from_config(cls, cfg):
        return cls(
            train_latents=cfg["train_latents"], lr=cfg["lr"],
            warmup_steps=cfg["warmup_steps"], batch_size=cfg["batch_size"],
            max_epochs=cfg["max_epochs"], patience=cfg["patience"],
            stop_accuracy=cfg["stop_accuracy"], seed=cfg["seed"],
        )


@dataclass
class EpochStats:
    epoch: int
    step: int
    lr: float
    train_loss: float
    valid_token_acc: float
    valid_exact_match: float

    def line(self):
        return (
            f"{self.epoch}\t{self.step}\t{self.lr:.6g}\t{self.train_loss:.6f}"
            f"\t{self.valid_token_acc:.6f}\t{self.valid_exact_match:.6f}"
        )


@dataclass
class TrainResult:
    metrics: list
    checkpoints: list  # (epoch, valid_token_acc, {name: array}) snapshots
    best_epoch: int

    def best_checkpoints(self, count):
        ranked = sorted(self.checkpoints, key=lambda c: (-c[1], c[0]))
        return [tensors for _, _, tensors in ranked[:count]]


def token_accuracy(predictions, references):
    """Mean fraction of matching positions, normalized by the longer
    of prediction and reference."""
    total = 0.0
    for pred, ref in zip(predictions, references):
        width = max(len(pred), len(ref))
        if width == 0:
            total += 1.0
            continue
        matches = sum(1 for a, b in zip(pred, ref) if a == b)
        total += matches / width
    return total / len(predictions)


def exact_match(predictions, references):
    hits = sum(1 for p, r in zip(predictions, references) if list(p) == list(r))
    return hits / len(predictions)


def train(net, train_data, valid_data, cfg: TrainConfig, out_dir=None, log=None) -> TrainResult:
    """Train with per-example random latent subsampling (k of n).

    Per epoch the metric log records one tab-separated line of
    epoch/step/lr/train-loss/validation-metrics. Training stops on the
    accuracy target, the patience window or the epoch cap, whichever
    comes first. A non-finite loss aborts with DivergenceError.
    """
    from . import serialize
    from .decoder import SPECIAL_TOKENS

    optimizer = AdamW(net.parameters(), lr=cfg.lr)
    rng = np.random.default_rng((cfg.seed, 1))
    n = net.n_latents
    k = cfg.train_latents
    if not 1 <= k <= n:
        raise ContractError("train_latents must satisfy 1 <= k <= n")
    step = 0
    metrics = []
    checkpoints = []
    best_acc, best_epoch, since_best = -1.0, 0, 0
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(len(train_data))
        losses = []
        for start in range(0, len(order), cfg.batch_size):
            batch = [train_data[i] for i in order[start : start + cfg.batch_size]]
            step += 1
            optimizer.lr = lr_schedule(step, cfg.lr, cfg.warmup_steps)
            optimizer.zero_grad()
            batch_loss = None
            for source, tokens in batch:
                ids = dla.sample_train_latents(n, k, rng)
                loss = net.forward_loss(source, tokens, latent_ids=ids, training=True, rng=rng)
                batch_loss = loss if batch_loss is None else batch_loss + loss
            batch_loss = batch_loss * (1.0 / len(batch))
            value = batch_loss.item()
            if not math.isfinite(value):
                raise DivergenceError(f"non-finite loss at step {step}")
            losses.append(value)
            batch_loss.backward()
            optimizer.step()
        stats = evaluate(net, valid_data, rng=np.random.default_rng((cfg.seed, 2, epoch)))
        entry = EpochStats(
            epoch=epoch, step=step, lr=optimizer.lr,
            train_loss=float(np.mean(losses)),
            valid_token_acc=stats["token_accuracy"],
            valid_exact_match=stats["exact_match"],
        )
        metrics.append(entry)
        if log:
            log(entry.line())
        tensors = net.state_tensors()
        checkpoints.append((epoch, entry.valid_token_acc, tensors))
        if out_dir is not None:
            serialize.save_checkpoint(f"{out_dir}/epoch_{epoch:03d}.ckpt", net.cfg, tensors)
        if entry.valid_token_acc > best_acc:
            best_acc, best_epoch, since_best = entry.valid_token_acc, epoch, 0
        else:
            since_best += 1
        if entry.valid_token_acc >= cfg.stop_accuracy or since_best >= cfg.patience:
            break
    return TrainResult(metrics=metrics, checkpoints=checkpoints, best_epoch=best_epoch)


def evaluate(net, data, dla_mode="full", k_prime=None, beam=1, rng=None):
    """Greedy/beam decoding metrics plus the analytic FLOP total.

    dla_mode "diverse" routes through the greedy diversity selection,
    "random" through the uniform baseline; "full" uses every latent.
    """
    from . import flops as flops_mod
    from .decoder import SPECIAL_TOKENS

    if rng is None:
        rng = np.random.default_rng(0)
    if dla_mode == "full":
        k_eff = net.n_latents
    else:
        if k_prime is None:
            raise ContractError("k_prime is required for diverse/random evaluation")
        if k_prime > net.n_latents:
            raise ContractError("k' must not exceed the latent count n")
        k_eff = k_prime
    spec = net.model_spec(k_prime=k_eff)
    predictions, references = [], []
    total_flops = 0
    for source, tokens in data:
        result = net.transcribe(source, mode=dla_mode, k_prime=k_prime, beam=beam, rng=rng)
        predictions.append([t - SPECIAL_TOKENS for t in result.tokens])
        references.append(list(tokens))
        total_flops += flops_mod.cost(spec, source.shape[0], len(tokens) + 1).total
    return {
        "token_accuracy": token_accuracy(predictions, references),
        "exact_match": exact_match(predictions, references),
        "flops": total_flops,
    }


def average_checkpoints(tensor_dicts):
    """Elementwise mean of same-shaped named parameter sets."""
    from .errors import CheckpointError

    if not tensor_dicts:
        raise ContractError("no checkpoints to average")
    names = set(tensor_dicts[0])
    for other in tensor_dicts[1:]:
        if set(other) != names:
            raise CheckpointError("checkpoints name different parameters")
    out = {}
    for name in tensor_dicts[0]:
        arrays = [d[name] for d in tensor_dicts]
        shape = arrays[0].shape
        if any(a.shape != shape for a in arrays):
            raise CheckpointError(f"shape mismatch while averaging {name}")
        out[name] = (
            np.mean(np.stack([a.astype(np.float64) for a in arrays]), axis=0)
        ).astype(np.float32)
    return out
