"""Explicit softmax decoder solutions with warm-started training."""

from ._core import (
    ConfigError,
    DomainError,
    Error,
    FormatError,
    ShapeError,
    Tokenizer,
    cooccurrence,
    cross_entropy,
    estimate_priming,
    explicit_solution,
    forward,
    forward_2layer,
    gradient,
    load_mnist,
    local_warm_start,
    noise_embeddings,
    perplexity,
    prime_scan,
    run_command,
    softmax,
    train,
    window_features,
)

__version__ = "0.1.0"
