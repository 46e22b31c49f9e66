# Copyright 2026 The cvarprobe Authors
# SPDX-License-Identifier: Apache-2.0
"""CVaR-weighted, sign-perturbed training of MLP heads over embedding feature banks."""

from ._core import (
    CvarprobeError,
    FeatureBank,
    Model,
    binary_cross_entropy,
    cosine_lr,
    cross_entropy,
    cvar_lambda_search,
    cvar_objective,
    gen_synthetic,
    init_model,
    load_bank,
    load_model,
    macro_f1_multiclass,
    macro_f1_multilabel,
    run_cli,
    save_bank,
    save_bank_csv,
    tail_count,
    train,
)

__all__ = [
    "CvarprobeError",
    "FeatureBank",
    "Model",
    "binary_cross_entropy",
    "cosine_lr",
    "cross_entropy",
    "cvar_lambda_search",
    "cvar_objective",
    "gen_synthetic",
    "init_model",
    "load_bank",
    "load_model",
    "macro_f1_multiclass",
    "macro_f1_multilabel",
    "run_cli",
    "save_bank",
    "save_bank_csv",
    "tail_count",
    "train",
]
__version__ = "0.1.0"
