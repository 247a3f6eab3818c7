"""Split displacements into a radial contraction and a rotational remainder."""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np
from numpy.typing import ArrayLike

from lobe_registration.errors import ArgumentError, UndefinedDirectionError

if TYPE_CHECKING:
    from lobe_registration.registration.pipeline import RegistrationResult

# Points closer than this to the hilum have no radial direction (mm)
HILUM_EPSILON = 1e-6


def decompose_displacement(
    v: ArrayLike, phi_v: ArrayLike, epsilon: float = HILUM_EPSILON
) -> tuple[np.ndarray, np.ndarray]:
    """Contraction and rotation components of one displaced point.

    Both positions are in hilum-origin coordinates. The contraction is the
    change of distance to the hilum along the original direction,
    ``s = (|phi v| - |v|) / |v| * v``; the rotation is the rest, ``r = u - s``.

    Raises:
        UndefinedDirectionError: If ``|v| <= epsilon``.

    """
    v = np.asarray(v, dtype=np.float64)
    phi_v = np.asarray(phi_v, dtype=np.float64)
    norm = float(np.linalg.norm(v))
    if norm <= epsilon:
        raise UndefinedDirectionError(f"point at {v} is within {epsilon} mm of the hilum")
    s = (float(np.linalg.norm(phi_v)) - norm) / norm * v
    r = (phi_v - v) - s
    return s, r


def decompose_field(
    rest: ArrayLike, deformed: ArrayLike, epsilon: float = HILUM_EPSILON
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorised :func:`decompose_displacement`.

    Points within ``epsilon`` of the hilum get ``s = 0`` and ``r = u``.

    Returns:
        ``(s, r, valid)`` where ``valid`` flags points with a defined direction.

    """
    v = np.asarray(rest, dtype=np.float64).reshape(-1, 3)
    pv = np.asarray(deformed, dtype=np.float64).reshape(-1, 3)
    if v.shape != pv.shape:
        raise ArgumentError(f"rest and deformed shapes differ: {v.shape} vs {pv.shape}")
    norm = np.linalg.norm(v, axis=1)
    valid = norm > epsilon
    ratio = np.zeros_like(norm)
    ratio[valid] = (np.linalg.norm(pv[valid], axis=1) - norm[valid]) / norm[valid]
    s = ratio[:, None] * v
    r = (pv - v) - s
    return s, r, valid


@dataclass(frozen=True, eq=False)
class DeformationField:
    """Displacements of the analysed points in hilum-origin coordinates.

    ``rest`` is relative to the source hilum and ``deformed`` relative to the
    deformed hilum, so the hilum itself does not move.

    Attributes:
        rest: ``(P, 3)`` source positions.
        deformed: ``(P, 3)`` deformed positions.
        kinds: ``surface`` or ``centerline`` per point.

    """

    rest: np.ndarray
    deformed: np.ndarray
    kinds: tuple[str, ...]

    def __post_init__(self) -> None:
        rest = np.asarray(self.rest, dtype=np.float64).reshape(-1, 3)
        deformed = np.asarray(self.deformed, dtype=np.float64).reshape(-1, 3)
        if rest.shape != deformed.shape or len(self.kinds) != len(rest):
            raise ArgumentError("rest, deformed and kinds must describe the same points")
        object.__setattr__(self, "rest", rest)
        object.__setattr__(self, "deformed", deformed)
        object.__setattr__(self, "kinds", tuple(self.kinds))

    def __len__(self) -> int:
        return len(self.rest)

    @property
    def displacement(self) -> np.ndarray:
        return self.deformed - self.rest

    def components(self, epsilon: float = HILUM_EPSILON) -> tuple[np.ndarray, np.ndarray]:
        s, r, _ = decompose_field(self.rest, self.deformed, epsilon)
        return s, r

    @classmethod
    def from_models(
        cls,
        rest_surface: np.ndarray,
        rest_centerline: np.ndarray,
        rest_hilum: np.ndarray,
        deformed_surface: np.ndarray,
        deformed_centerline: np.ndarray,
        deformed_hilum: np.ndarray,
    ) -> "DeformationField":
        rest = np.vstack([rest_surface, rest_centerline]) - rest_hilum
        deformed = np.vstack([deformed_surface, deformed_centerline]) - deformed_hilum
        kinds = ("surface",) * len(rest_surface) + ("centerline",) * len(rest_centerline)
        return cls(rest, deformed, kinds)

    @classmethod
    def from_registration(cls, result: "RegistrationResult") -> "DeformationField":
        """Field over the surface vertices and centerline nodes of a registered lobe."""
        src, dfm = result.source, result.deformed
        return cls.from_models(
            src.surface.vertices,
            src.centerline.positions,
            src.hilum,
            dfm.surface.vertices,
            dfm.centerline.positions,
            dfm.hilum,
        )
