"""Monte Carlo estimators that use the square field Γ[X] and generator A[X]."""

from .core import (
    ExtendedBatch,
    ExtendedSample,
    ProductProvider,
    RngStream,
    SimulationError,
    StructureProvider,
    TripletBatch,
    TripletSample,
    derive_substream,
    validate_triplet,
)
from .presets import PRESETS, make_preset

__version__ = "0.1.0"

__all__ = [
    "ExtendedBatch",
    "ExtendedSample",
    "PRESETS",
    "ProductProvider",
    "RngStream",
    "SimulationError",
    "StructureProvider",
    "TripletBatch",
    "TripletSample",
    "derive_substream",
    "make_preset",
    "validate_triplet",
]
