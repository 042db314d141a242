"""Dynamic matching of capacity-constrained placements via trajectory-sampled
shadow-price potentials."""

from .model import (
    INCOMPATIBLE,
    INFINITE_CAPACITY,
    UNMATCHED_ID,
    Affiliate,
    CapacityProfile,
    Case,
    CompatRules,
    Instance,
    split_unit,
    unmatched_affiliate,
    validate,
)

__all__ = [
    "INCOMPATIBLE",
    "INFINITE_CAPACITY",
    "UNMATCHED_ID",
    "Affiliate",
    "CapacityProfile",
    "Case",
    "CompatRules",
    "Instance",
    "split_unit",
    "unmatched_affiliate",
    "validate",
]

__version__ = "0.1.0"
