from .fields import (GaugeField, SpinorField, dagger, generate_gauge, is_su3, random_su3,
                     round_to_half, su3_deviation)
from .gamma import GAMMA, GAMMA5, HOP_PROJECTORS, sigma
from .geometry import AXES, LatticeGeometry, axis_index
from .io import (GaugeDimensionError, GaugeFileError, GaugeHeaderError, GaugeTruncatedError,
                 checksum, read_gauge, write_gauge)
from .rng import Rng

__all__ = [
    "AXES", "GAMMA", "GAMMA5", "HOP_PROJECTORS", "GaugeDimensionError", "GaugeField",
    "GaugeFileError", "GaugeHeaderError", "GaugeTruncatedError", "LatticeGeometry", "Rng",
    "SpinorField", "axis_index", "checksum", "dagger", "generate_gauge", "is_su3",
    "random_su3", "read_gauge", "round_to_half", "sigma", "su3_deviation", "write_gauge",
]
