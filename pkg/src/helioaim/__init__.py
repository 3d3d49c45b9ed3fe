"""Heliostat aiming optimization with a neural-network surrogate embedded in a MILP."""
from .errors import HelioAimError
from .flux import AimVector, FluxMap, FluxModel, flux_map, spillage
from .plant import (
    EQUINOX_DAY,
    Heliostat,
    PlantConfig,
    SunState,
    desk_scale,
    dunhuang,
    generate_field,
    solar_position,
)
from .scoring import MetricsReport, metrics, quality_score

__version__ = "0.1.0"

__all__ = [
    "AimVector",
    "EQUINOX_DAY",
    "FluxMap",
    "FluxModel",
    "Heliostat",
    "HelioAimError",
    "MetricsReport",
    "PlantConfig",
    "SunState",
    "desk_scale",
    "dunhuang",
    "flux_map",
    "generate_field",
    "metrics",
    "quality_score",
    "solar_position",
    "spillage",
]
