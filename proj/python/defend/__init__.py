"""Vision-language pretraining pipeline with an EMA teacher-student backbone.

The heavy lifting lives in the C++ core; this package re-exports the bound
operations and the in-process CLI driver.
"""

from ._core import (
    BOS_ID,
    EOS_ID,
    PAD_ID,
    UNK_ID,
    ConfigurationError,
    ContractError,
    DataError,
    NumericError,
    ShapeError,
    adaptive_sample,
    build_vocab,
    contrastive_loss,
    cosine_similarity,
    description_loss,
    ema_update,
    generate_data,
    layer_norm,
    lr_at,
    patch_coherence_loss,
    patch_count,
    run_cli,
    saliency_totals,
    scaled_dot_product_attention,
    tokenize,
    validate_record,
)

__all__ = [
    "BOS_ID",
    "EOS_ID",
    "PAD_ID",
    "UNK_ID",
    "ConfigurationError",
    "ContractError",
    "DataError",
    "NumericError",
    "ShapeError",
    "adaptive_sample",
    "build_vocab",
    "contrastive_loss",
    "cosine_similarity",
    "description_loss",
    "ema_update",
    "generate_data",
    "layer_norm",
    "lr_at",
    "patch_coherence_loss",
    "patch_count",
    "run_cli",
    "saliency_totals",
    "scaled_dot_product_attention",
    "tokenize",
    "validate_record",
]

__version__ = "0.1.0"
