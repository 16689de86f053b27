"""Joint longitudinal-survival modeling with a defective-Gompertz cure fraction."""

__version__ = "0.1.0"

from .gompertz import DomainError, GompertzParams, InvalidParameterError
from .model import (
    BiomarkerDesign,
    DimensionError,
    FixedEffects,
    JointDataset,
    JointModelSpec,
    LongitudinalRecord,
    RandomEffects,
    RandomEffectsSpec,
    SubjectData,
)

__all__ = [
    "BiomarkerDesign",
    "DimensionError",
    "DomainError",
    "FixedEffects",
    "GompertzParams",
    "InvalidParameterError",
    "JointDataset",
    "JointModelSpec",
    "LongitudinalRecord",
    "RandomEffects",
    "RandomEffectsSpec",
    "SubjectData",
    "__version__",
]
