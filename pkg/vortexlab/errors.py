from typing import Any, Dict, Optional


class VortexLabError(Exception):
    """Base error; `module` names the computation that rejected its input."""

    def __init__(self, message: str, module: str = "vortexlab", details: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.module = module
        self.details = details or {}

    def __str__(self):
        return f"[{self.module}] {super().__str__()}"


class ConfigError(VortexLabError):
    pass


class GeometryError(VortexLabError):
    pass


class VortexError(VortexLabError):
    pass


class QuantizationError(VortexLabError):

    def __init__(self, message: str, row: int, defect: float, module: str = "canonical"):
        super().__init__(message, module=module, details={"row": row, "defect": defect})
        self.row = row
        self.defect = defect


class ConvergenceError(VortexLabError):

    def __init__(self, message: str, residual: float, module: str = "vortexlab"):
        super().__init__(message, module=module, details={"residual": residual})
        self.residual = residual
