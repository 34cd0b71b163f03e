"""Lattice laboratory for mean-field bosonic dynamics.

Hartree evolution on a periodic lattice, truncated bosonic Fock space
calculus, coherent-state fluctuation dynamics and the experiment drivers
that compare many-body and mean-field reduced densities.
"""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    CapacityError,
    ConfigError,
    ConvergenceError,
    DivergenceError,
    LabError,
    NumericalError,
    ParameterError,
    ShapeError,
    TruncationError,
    UndefinedDensityError,
)
from .lattice import FieldVector, Grid, PotentialSpec, gaussian_packet, plane_wave  # noqa: E402
from .fock import FockState, OccupationBasis, vacuum  # noqa: E402

__all__ = [
    "__version__",
    "CapacityError",
    "ConfigError",
    "ConvergenceError",
    "DivergenceError",
    "LabError",
    "NumericalError",
    "ParameterError",
    "ShapeError",
    "TruncationError",
    "UndefinedDensityError",
    "FieldVector",
    "Grid",
    "PotentialSpec",
    "gaussian_packet",
    "plane_wave",
    "FockState",
    "OccupationBasis",
    "vacuum",
]
