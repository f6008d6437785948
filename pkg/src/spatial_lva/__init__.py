"""Spatially aware registration of functional data by local variation analysis.

The package aligns spatially indexed curves (one per location) to a latent
common clock.  Each curve's cumulative local variation is estimated from a
quintic-penalty REML smoothing fit; the inverses are averaged with
covariance-optimal weights obtained from a Matérn variogram fitted to the
pairwise profile differences; composing with the average yields the
per-location time warps.  Non-Euclidean distances (e.g. travel times) are
first repaired into metrics and approximated by Euclidean embeddings so
that valid covariogram families apply.
"""

from .embedding import (
    DistanceMatrix,
    Embedding,
    GeoCoords,
    GramMatrix,
    MetricEmbedding,
    double_center,
    embed,
    embedded_distances,
    geodesic_distances,
    metric_repair,
    positive_rank,
    select_dimension,
    symmetrize,
)
from .errors import (
    DegenerateInputError,
    NumericalError,
    SpatialLVAError,
    ValidationError,
)
from .registration import (
    LocalVariationRegistration,
    RegistrationResult,
    phase_functionals,
    prepare_curves,
    register,
    register_both_modes,
)
from .simulation import (
    SimConfig,
    SimResultRow,
    gen_dataset,
    gen_locations,
    gen_true_warps,
    mse,
    run_experiment,
)
from .smoothing import (
    SampledCurve,
    SmoothCurve,
    derivative,
    fit_smoothing_spline,
    l2_normalize,
)
from .variogram import (
    ExponentialParams,
    MaternParams,
    VariogramCloud,
    blue_weights,
    covariance_matrix,
    fit_irwls,
    matern_correlation,
    model_semivariance,
    semivariance_cloud,
)
from .warp import (
    MonotoneMap,
    PhaseFunctionals,
    compose,
    displacement,
    invert,
    local_variation,
    stretch,
    weighted_mean,
)

__version__ = "0.1.0"

__all__ = [
    "DistanceMatrix", "Embedding", "GeoCoords", "GramMatrix", "MetricEmbedding",
    "double_center", "embed", "embedded_distances", "geodesic_distances",
    "metric_repair", "positive_rank", "select_dimension", "symmetrize",
    "SpatialLVAError", "ValidationError", "DegenerateInputError", "NumericalError",
    "LocalVariationRegistration", "RegistrationResult", "phase_functionals",
    "prepare_curves", "register", "register_both_modes",
    "SimConfig", "SimResultRow", "gen_dataset", "gen_locations", "gen_true_warps",
    "mse", "run_experiment",
    "SampledCurve", "SmoothCurve", "derivative", "fit_smoothing_spline", "l2_normalize",
    "ExponentialParams", "MaternParams", "VariogramCloud", "blue_weights",
    "covariance_matrix", "fit_irwls", "matern_correlation", "model_semivariance",
    "semivariance_cloud",
    "MonotoneMap", "PhaseFunctionals", "compose", "displacement", "invert",
    "local_variation", "stretch", "weighted_mean",
]
