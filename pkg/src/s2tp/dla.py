"""Dynamic latent access: random training-time subsampling and the
greedy diversity-based inference-time selection, plus its random
baseline.

Selection operates on plain numpy arrays (or Tensors, whose data is
used); it is never differentiated through. The greedy rule: latents are
attention-weight rows, similarity is absolute cosine between
l2-normalized rows, the first pick is the row whose worst-case
similarity to any other row is smallest, and each subsequent pick
minimizes the maximum similarity to the already-selected set. All ties
break toward the lowest index.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DegenerateAttentionError
from .tensor import Tensor


@dataclass
class SelectionResult:
    """Ordered selected latent ids and the gathered latent rows."""

    ids: list
    latents: np.ndarray


def _as_array(x):
    return x.data if isinstance(x, Tensor) else np.asarray(x)


def sample_train_latents(n: int, k: int, rng) -> np.ndarray:
    """Uniform k-subset of [0, n) for one training example.

    k = n short-circuits to the identity selection so that disabling
    latent subsampling does not consume randomness.
    """
    if not 1 <= k <= n:
        raise ContractError(f"need 1 <= k <= n, got k={k}, n={n}")
    if k == n:
        return np.arange(n)
    return rng.choice(n, size=k, replace=False)


def similarity(A, frame_mask=None) -> np.ndarray:
    """Absolute cosine similarity matrix of the attention rows.

    Rows are l2-normalized over unmasked frames only; the diagonal is
    zeroed and excluded from every selection decision downstream.
    """
    A = _as_array(A).astype(np.float64)
    if frame_mask is not None:
        A = A[:, np.asarray(frame_mask, dtype=bool)]
    norms = np.linalg.norm(A, axis=1, keepdims=True)
    if (norms == 0).any():
        raise DegenerateAttentionError("attention row has zero norm over unmasked frames")
    normalized = A / norms
    S = np.abs(normalized @ normalized.T)
    np.clip(S, 0.0, 1.0, out=S)
    np.fill_diagonal(S, 0.0)
    return S


def _initial_id(S):
    # Most diverse latent: smallest worst-case similarity to the rest.
    masked = S.copy()
    np.fill_diagonal(masked, -np.inf)
    return int(np.argmin(masked.max(axis=1)))


def select_diverse(Z, A, k_prime: int, frame_mask=None) -> SelectionResult:
    """Greedy max-min-diversity selection of k' latent rows."""
    Z = _as_array(Z)
    n = Z.shape[0]
    if not 1 <= k_prime <= n:
        raise ContractError(f"need 1 <= k' <= n, got k'={k_prime}, n={n}")
    S = similarity(A, frame_mask)
    if n == 1:
        return SelectionResult(ids=[0], latents=Z[[0]].copy())
    ids = [_initial_id(S)]
    while len(ids) < k_prime:
        scores = S[:, ids].max(axis=1)
        scores[ids] = np.inf
        ids.append(int(np.argmin(scores)))
    return SelectionResult(ids=ids, latents=Z[np.asarray(ids)].copy())


def select_diverse_batch(Zs, As, k_prime: int, frame_masks=None):
    """Batched greedy selection over same-sized examples.

    Vectorized across the batch dimension; selections are exactly the
    per-example sequential ones.
    """
    if frame_masks is None:
        frame_masks = [None] * len(Zs)
    S = np.stack([similarity(A, mask) for A, mask in zip(As, frame_masks)])
    batch, n, _ = S.shape
    if not 1 <= k_prime <= n:
        raise ContractError(f"need 1 <= k' <= n, got k'={k_prime}, n={n}")
    masked = S.copy()
    idx = np.arange(n)
    masked[:, idx, idx] = -np.inf
    ids = np.empty((batch, k_prime), dtype=np.int64)
    ids[:, 0] = masked.max(axis=2).argmin(axis=1)
    rows = np.arange(batch)
    for t in range(1, k_prime):
        chosen = ids[:, :t]  # [batch, t]
        scores = np.take_along_axis(S, chosen[:, None, :], axis=2).max(axis=2)
        scores[rows[:, None], chosen] = np.inf
        ids[:, t] = scores.argmin(axis=1)
    return [
        SelectionResult(ids=list(map(int, ids[b])), latents=_as_array(Zs[b])[ids[b]].copy())
        for b in range(batch)
    ]


def select_random(Z, k_prime: int, rng) -> SelectionResult:
    """Uniform random k'-subset baseline."""
    Z = _as_array(Z)
    n = Z.shape[0]
    if not 1 <= k_prime <= n:
        raise ContractError(f"need 1 <= k' <= n, got k'={k_prime}, n={n}")
    ids = rng.choice(n, size=k_prime, replace=False)
    return SelectionResult(ids=list(map(int, ids)), latents=Z[ids].copy())
