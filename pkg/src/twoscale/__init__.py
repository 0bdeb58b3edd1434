"""Two-scale reaction-diffusion solver for sulfate corrosion of concrete.

Each macroscopic point of a sewer pipe wall carries a microscopic pore cell
holding acid (``w1``) and dissolved H2S (``w2``); gaseous H2S (``w3``) diffuses
along the pipe and gypsum (``w4``) grows on the solid-water interface.
"""

from .config import RunConfig, parse_config, serialize_config
from .driver import (
    Forcing,
    TwoScaleSolver,
    TwoScaleState,
    check_bounds,
    outer_step,
    run,
    stability_probe,
)
from .errors import (
    ConfigError,
    ContractionError,
    DegenerateKineticsError,
    EllipticityError,
    InvalidArgumentError,
    NonlinearSolverError,
    SingularSystemError,
    SnapshotFormatError,
    SolverError,
    TwoScaleError,
)
from .kinetics import BoundsEnvelope, KineticsSpec, compute_bounds_envelope

__version__ = "0.1.0"
