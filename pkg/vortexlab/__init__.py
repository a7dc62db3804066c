from vortexlab.errors import ConfigError, ConvergenceError, GeometryError, QuantizationError, VortexError, VortexLabError
from vortexlab.geometry import SurfaceModel, SurfaceSpec, make_surface

__version__ = "0.1.0"
