"""Perceiver speech-to-text model with dynamic latent access.

A dependency-light implementation of a Perceiver encoder + Transformer
decoder sequence model whose latent space can be randomly subsampled
during training and greedily subselected (by attention-weight
diversity) at inference, together with an analytic FLOP cost model and
a synthetic-task training harness.
"""

from .dla import (
    SelectionResult,
    sample_train_latents,
    select_diverse,
    select_random,
    similarity,
)
from .errors import (
    CheckpointError,
    ConfigError,
    ContractError,
    DegenerateAttentionError,
    DivergenceError,
    MaskError,
    ShapeError,
)
from .flops import CostReport, ModelSpec, corpus_ratio, cost
from .harness import ToyTask, generate_dataset
from .model import SpeechToTextPerceiver, build_network
from .perceiver import PerceiverEncoder, complexity
from .tensor import Tensor, count_macs, finite_diff_check, no_grad

__all__ = [
    "CheckpointError",
    "ConfigError",
    "ContractError",
    "CostReport",
    "DegenerateAttentionError",
    "DivergenceError",
    "MaskError",
    "ModelSpec",
    "PerceiverEncoder",
    "SelectionResult",
    "ShapeError",
    "SpeechToTextPerceiver",
    "Tensor",
    "ToyTask",
    "build_network",
    "generate_dataset",
    "complexity",
    "corpus_ratio",
    "cost",
    "count_macs",
    "finite_diff_check",
    "no_grad",
    "sample_train_latents",
    "select_diverse",
    "select_random",
    "similarity",
]

__version__ = "0.1.0"
