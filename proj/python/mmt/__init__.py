"""Multimodal matching transformer for live-comment ranking."""

from ._mmt import (
    ConfigError,
    DataError,
    NumericError,
    ParseError,
    __version__,
    cosine,
    evaluate,
    grad_check,
    margin_loss,
    mean_rank,
    mrr,
    positional_embedding,
    rank_candidates,
    recall_at_k,
    synth,
    tokenize,
    train,
)

__all__ = [
    "ConfigError",
    "DataError",
    "NumericError",
    "ParseError",
    "__version__",
    "cosine",
    "evaluate",
    "grad_check",
    "margin_loss",
    "mean_rank",
    "mrr",
    "positional_embedding",
    "rank_candidates",
    "recall_at_k",
    "synth",
    "tokenize",
    "train",
]
