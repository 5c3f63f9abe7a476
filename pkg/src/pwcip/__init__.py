"""Travel-time coefficient inverse problem for the wave equation on a semi-discrete grid."""

from . import carleman, errors, fdgrid, forward, geodesics, inversion, lab, medium
from .errors import PwcipError
from .fdgrid import GridSpec
from .medium import (MediumSpec, bump_medium, constant_medium, layered_medium,
                     validate_medium, windowed_medium)

__all__ = ["carleman", "errors", "fdgrid", "forward", "geodesics", "inversion", "lab", "medium",
           "PwcipError", "GridSpec", "MediumSpec", "bump_medium", "constant_medium",
           "layered_medium", "validate_medium", "windowed_medium"]
