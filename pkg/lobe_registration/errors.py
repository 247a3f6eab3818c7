"""Exception hierarchy shared by the registration and analysis modules."""

from __future__ import annotations


class LobeRegistrationError(Exception):
    """Base class for every error raised by :mod:`lobe_registration`."""

    pass


class ArgumentError(LobeRegistrationError, ValueError):
    """Raised when a function receives arguments outside its contract."""

    pass


class ConfigurationError(LobeRegistrationError):
    """Raised when configuration values or edge weights are inconsistent."""

    pass


class DegenerateGeometryError(LobeRegistrationError):
    """Raised when geometry has zero area, zero volume or zero extent."""

    pass


class InvariantError(LobeRegistrationError):
    """Raised when a geometric invariant does not hold.

    Attributes:
        invariant: Short machine-readable name of the violated invariant.

    """

    def __init__(self, invariant: str, message: str) -> None:
        super().__init__(f"[{invariant}] {message}")
        self.invariant = invariant


class BindingError(LobeRegistrationError):
    """Raised when a point cannot be attached to any tetrahedral element.

    Attributes:
        point_index: Index of the offending point in the input list.
        distance: Distance from the point to the nearest element in mm.

    """

    def __init__(self, point_index: int, distance: float) -> None:
        super().__init__(
            f"point {point_index} lies outside the mesh "
            f"(distance to nearest element {distance:.6g} mm)"
        )
        self.point_index = point_index
        self.distance = distance


class RegistrationError(LobeRegistrationError):
    """Raised when an optimisation step cannot continue."""

    pass


class SpecError(LobeRegistrationError):
    """Raised when a phantom specification cannot be realised.

    Attributes:
        field: Name of the specification field responsible for the failure.

    """

    def __init__(self, field: str, message: str) -> None:
        super().__init__(f"{field}: {message}")
        self.field = field


class UndefinedDirectionError(ArgumentError):
    """Raised when a radial direction is requested at the hilum itself."""

    pass


class RankDeficiencyError(ArgumentError):
    """Raised when a regression has no spread in its reference distances."""

    pass


class EmptyReportError(LobeRegistrationError):
    """Raised when no branch could be sampled for a strain report."""

    pass


class FormatError(LobeRegistrationError):
    """Raised when a geometry or manifest file cannot be parsed.

    Attributes:
        path: File being parsed.
        line: One-based line number, or ``None`` when not applicable.
        field: Name of the offending field, or ``None``.

    """

    def __init__(
        self,
        path: str,
        message: str,
        *,
        line: int | None = None,
        field: str | None = None,
    ) -> None:
        location = path
        if line is not None:
            location += f":{line}"
        if field is not None:
            location += f" [{field}]"
        super().__init__(f"{location}: {message}")
        self.path = path
        self.line = line
        self.field = field


class ManifestError(FormatError):
    """Raised when a case manifest is missing fields or references."""

    pass


class OutputError(LobeRegistrationError):
    """Raised when a result file cannot be written.

    Attributes:
        path: File being written.

    """

    def __init__(self, path: str, message: str) -> None:
        super().__init__(f"{path}: {message}")
        self.path = path
