"""Activation-space tail-eigenvector low-rank adaptation lab.

Thin python surface over the C++ core: dense symmetric eigendecomposition
and thin SVD, activation covariance accumulation, adapter initialization
strategies (vanilla LoRA, PiSSA, MiLoRA, tail/quantile eigenvector picks),
the cosine-warmup schedule, effective-rank diagnostics, and the
config-driven experiment runner.
"""

from astralab._core import (
    AdaptedLayer,
    AstraError,
    CovarianceAccumulator,
    __version__,
    effective_rank,
    energy_split,
    init_astra,
    init_milora,
    init_pissa,
    init_quantile,
    init_vanilla,
    lr_at,
    matmul,
    project,
    run_experiment,
    sym_eigh,
    thin_svd,
)

__all__ = [
    "AdaptedLayer",
    "AstraError",
    "CovarianceAccumulator",
    "__version__",
    "effective_rank",
    "energy_split",
    "init_astra",
    "init_milora",
    "init_pissa",
    "init_quantile",
    "init_vanilla",
    "lr_at",
    "matmul",
    "project",
    "run_experiment",
    "sym_eigh",
    "thin_svd",
]
