"""Multifidelity Monte Carlo estimation through shared latent subspaces.

Low-fidelity models are re-parameterized on the high-fidelity inputs through
normalizing flows combined with active subspaces or supervised autoencoders,
which raises their correlation with the high-fidelity model and therefore
the variance reduction of the multifidelity estimator.
"""

from .dimred import (
    ActiveSubspace,
    AutoencoderPair,
    active_subspace,
    align_latents,
    eigendecompose_sym,
    estimate_c_matrix,
    model_as_encoder,
    train_autoencoder,
)
from .distributions import sample
from .estimators import (
    AllocationPlan,
    EstimatorReport,
    ModelSpec,
    PipelineConfig,
    chebyshev_halfwidth,
    mc_estimate,
    mfmc_beneficial,
    mfmc_estimate,
    optimal_allocation,
    optimal_beta,
    pearson,
    pipeline_mfmc,
    pipeline_mfmc_ae,
    pipeline_mfmc_as,
    variance_reduction_factor,
)

__version__ = "0.1.0"

__all__ = [
    "ActiveSubspace", "AllocationPlan", "AutoencoderPair", "EstimatorReport", "ModelSpec", "PipelineConfig",
    "active_subspace", "align_latents", "chebyshev_halfwidth", "eigendecompose_sym", "estimate_c_matrix",
    "mc_estimate", "mfmc_beneficial", "mfmc_estimate", "model_as_encoder", "optimal_allocation",
    "optimal_beta", "pearson", "pipeline_mfmc", "pipeline_mfmc_ae", "pipeline_mfmc_as", "sample",
    "train_autoencoder", "variance_reduction_factor",
]
