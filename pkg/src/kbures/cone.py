"""Cone structure of the distance: positive measures as a cone over unit-mass ones.

With ``G ~ [G / r^2, r]`` and ``r = sqrt(mass)``, the half-distance
``d_KB / 2`` is the cone metric over the unit-mass measures equipped with
half the spherical distance ``d_SKB / 2``. Spherical distances are therefore
recovered from a single dynamic solve between normalized measures.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, InputError
from .measures import MatrixMeasure, normalize_to_unit_mass, total_mass
from .solver import solve

MASS_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class ConePoint:
    """A measure in cone coordinates; the apex has ``radius == 0`` and no base."""

    base: MatrixMeasure | None
    radius: float

    def __post_init__(self):
        if not self.radius >= 0:
            raise InputError("radius must be nonnegative")
        if self.radius == 0:
            if self.base is not None:
                raise InputError("the apex carries no base measure")
        elif self.base is None or abs(total_mass(self.base) - 1.0) > MASS_TOL:
            raise InputError("the base must have unit mass")

    @classmethod
    def from_measure(cls, G):
        if total_mass(G) == 0.0:
            return cls(None, 0.0)
        base, r = normalize_to_unit_mass(G)
        return cls(base, r)

    def to_measure(self, like):
        """Back to a measure; ``like`` supplies the grid and shape for the apex."""
        if self.base is None:
            return MatrixMeasure(like.grid, np.zeros_like(like.values))
        return MatrixMeasure(self.base.grid, self.base.values * self.radius**2)


def cone_distance_formula(r0, r1, sphere_dist):
    """``sqrt(r0^2 + r1^2 - 2 r0 r1 cos(sphere_dist))``, the radicand clamped at zero."""
    if r0 < 0 or r1 < 0:
        raise InputError("radii must be nonnegative")
    if not 0.0 <= sphere_dist <= np.pi:
        raise InputError(f"sphere distance {sphere_dist} outside [0, pi]")
    return float(np.sqrt(max(r0 * r0 + r1 * r1 - 2.0 * r0 * r1 * np.cos(sphere_dist), 0.0)))


def spherical_from_kb(d_kb):
    """Invert the cone identity for unit masses: ``2 arccos(1 - d^2 / 8)``.

    Unit-mass measures satisfy ``d_KB <= sqrt(8)``, so the cosine is clamped
    to ``[0, 1]``; discretization overshoot therefore maps to at most ``pi``.
    """
    value = 2.0 * np.arccos(np.clip(1.0 - d_kb * d_kb / 8.0, 0.0, 1.0))
    return float(min(value, np.pi))


def spherical_distance(G0, G1, cfg=None, with_report=False):
    """Spherical distance between the unit-mass normalizations of ``G0`` and ``G1``.

    Raises :class:`DomainError` if either measure has zero mass. With
    ``with_report`` the solver report is returned as well.
    """
    if total_mass(G0) <= 0.0 or total_mass(G1) <= 0.0:
        raise DomainError("spherical distance needs measures of positive mass")
    H0, _ = normalize_to_unit_mass(G0)
    H1, _ = normalize_to_unit_mass(G1)
    report, _ = solve(H0, H1, cfg)
    value = spherical_from_kb(report.distance)
    return (value, report) if with_report else value


def scaling_identity_residual(G0, G1, r0, r1, cfg=None):
    """Relative defect of ``d^2(r0^2 G0, r1^2 G1) = r0 r1 d^2(G0, G1) + 4 (r0 - r1)^2``.

    ``G0`` and ``G1`` must have unit mass. Returns ``|lhs - rhs| / (1 + rhs)``.
    """
    for G in (G0, G1):
        if abs(total_mass(G) - 1.0) > 1e-8:
            raise InputError("scaling identity needs unit-mass measures")
    if not (r0 > 0 and r1 > 0):
        raise InputError("radii must be positive")
    base, _ = solve(G0, G1, cfg)
    scaled, _ = solve(
        MatrixMeasure(G0.grid, G0.values * r0**2),
        MatrixMeasure(G1.grid, G1.values * r1**2),
        cfg,
    )
    rhs = r0 * r1 * base.energy + 4.0 * (r0 - r1) ** 2
    return abs(scaled.energy - rhs) / (1.0 + rhs)
