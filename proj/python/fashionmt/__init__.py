from ._core import (
    Error,
    bleu4,
    cider,
    clip_scale_config,
    corpus_sizes,
    default_config,
    detokenize,
    ias_scale,
    imtlg_alpha,
    imtlg_projection_gap,
    param_account,
    relative_change,
    rouge_l,
    tokenize,
    train,
    validate_config,
)

__all__ = [
    "Error",
    "bleu4",
    "cider",
    "clip_scale_config",
    "corpus_sizes",
    "default_config",
    "detokenize",
    "ias_scale",
    "imtlg_alpha",
    "imtlg_projection_gap",
    "param_account",
    "relative_change",
    "rouge_l",
    "tokenize",
    "train",
    "validate_config",
]
