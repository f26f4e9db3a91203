from __future__ import annotations


class TrapNoiseError(Exception):
    pass


class ConfigError(TrapNoiseError):
    def __init__(self, path: str, message: str) -> None:
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path
        self.message = message


class ParameterError(ConfigError):
    """Invalid domain parameter; `path` names the offending field."""


class FeatureResolutionError(ConfigError):
    pass


class MeshParseError(ConfigError):
    def __init__(self, source: str, line: int, message: str) -> None:
        super().__init__(f"{source}:{line}", message)
        self.source = source
        self.line = line


class NumericalError(TrapNoiseError):
    def __init__(self, module: str, message: str) -> None:
        super().__init__(f"[{module}] {message}")
        self.module = module
        self.message = message


class BemSizeError(NumericalError):
    def __init__(self, patch_count: int, required_bytes: int, cap_bytes: int) -> None:
        super().__init__(
            "electrostatics",
            f"{patch_count} patches need ~{required_bytes / 2**30:.2f} GiB, cap is {cap_bytes / 2**30:.2f} GiB",
        )
        self.patch_count = patch_count
        self.required_bytes = required_bytes
        self.cap_bytes = cap_bytes


class SolverError(NumericalError):
    def __init__(self, message: str, condition: float = float("nan")) -> None:
        super().__init__("electrostatics", f"{message} (condition estimate {condition:.3e})")
        self.condition = condition


class ConvergenceError(NumericalError):
    def __init__(self, module: str, message: str, trace: list[tuple[int, float]] | None = None) -> None:
        super().__init__(module, message)
        self.trace = list(trace or [])


class UnconfinedError(NumericalError):
    def __init__(self, axis: str, eigenvalue: float) -> None:
        super().__init__("trapdynamics", f"unconfined direction along {axis} (curvature {eigenvalue:.3e} J/m^2)")
        self.axis = axis
        self.eigenvalue = eigenvalue


class InsufficientResolutionError(NumericalError):
    def __init__(self, message: str) -> None:
        super().__init__("heating", message)


class PipelineError(NumericalError):
    def __init__(self, tag: str, cause: NumericalError) -> None:
        super().__init__(cause.module, f"{tag}: {cause.message}")
        self.tag = tag
        self.cause = cause
