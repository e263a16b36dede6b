"""Online estimation of time-varying graph signals.

Adaptive graph LMS filters (GLMS, GNLMS), the LMS-GNN estimator that learns
the spectral response of such a filter by backpropagation, a spectral GCN
baseline, synthetic data generation and an experiment harness.
"""
from .backend import BACKEND
from .errors import (
    ConfigError,
    DataError,
    DegenerateMaskError,
    DimensionMismatchError,
    InvalidInputError,
    InvalidParameterError,
    LmsGnnError,
    MissingFileError,
    NonNumericCellError,
    NumericalFailure,
)
from .graph import (
    Graph,
    NodeCoordinates,
    SpectralBasis,
    build_knn_graph,
    eigendecompose,
    gft,
    igft,
    laplacian,
)

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "ConfigError",
    "DataError",
    "DegenerateMaskError",
    "DimensionMismatchError",
    "Graph",
    "InvalidInputError",
    "InvalidParameterError",
    "LmsGnnError",
    "MissingFileError",
    "NodeCoordinates",
    "NonNumericCellError",
    "NumericalFailure",
    "SpectralBasis",
    "build_knn_graph",
    "eigendecompose",
    "gft",
    "igft",
    "laplacian",
]
