"""Closed-form modal analysis of a thin square plate with free edges.

Kirchhoff-Love theory for a centrally excited square plate: bending
stiffness, natural frequencies from dimensionless mode coefficients,
antisymmetric mode shapes on the normalized square [-1, 1]^2, amplitude
fields with central/edge loss corrections, and the low-amplitude masks
where loose particles settle.

All functions are pure and operate in 64-bit floats.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

__all__ = [
    "PlateSpec",
    "ModeOrder",
    "DecayParams",
    "FieldGrid",
    "NodalMask",
    "bending_stiffness",
    "natural_frequency",
    "mode_shape",
    "grid_coordinates",
    "amplitude_field",
    "nodal_mask",
    "nodal_line_count",
    "center_exclusion_norm",
]

# Physical center exclusion: a 3 mm mounting area where no particles sit.
CENTER_EXCLUSION_RADIUS_M = 3e-3


@dataclass(frozen=True)
class PlateSpec:
    """Material and geometry of the square plate.

    Defaults describe a 160 mm stainless steel plate, 0.8 mm thick.

    Attributes:
        elastic_modulus: Young's modulus E (Pa)
        poisson_ratio: Poisson's ratio (dimensionless, in (0, 0.5))
        density: mass density (kg/m^3)
        thickness: plate thickness h (m)
        side_length: plate side length a (m)
    """

    elastic_modulus: float = 200e9
    poisson_ratio: float = 0.3
    density: float = 7850.0
    thickness: float = 0.8e-3
    side_length: float = 0.16

    def __post_init__(self):
        for name in ("elastic_modulus", "density", "thickness", "side_length"):
            if not getattr(self, name) > 0:
                raise ValueError(f"PlateSpec.{name} must be strictly positive")
        if not 0.0 < self.poisson_ratio < 0.5:
            raise ValueError("PlateSpec.poisson_ratio must lie in (0, 0.5)")


@dataclass(frozen=True)
class ModeOrder:
    """Modal order (n, m) of a plate eigenmode; n != m is required because
    the antisymmetric shape combination vanishes identically for n == m."""

    n: int
    m: int

    def __post_init__(self):
        if self.n < 1 or self.m < 1:
            raise ValueError("mode orders must be positive integers")
        if self.n == self.m:
            raise ValueError("mode orders n and m must differ")


@dataclass(frozen=True)
class DecayParams:
    """Loss corrections applied to the raw mode shape.

    central_decay is the exponent of the radial loss term exp(-central_decay * r)
    around the excitation point; edge_damping is the exponent of the free-edge
    loss term exp(-edge_damping * (|x| + |y|)). Both zero means no correction.
    """

    central_decay: float = 0.5
    edge_damping: float = 0.3

    def __post_init__(self):
        if self.central_decay < 0 or self.edge_damping < 0:
            raise ValueError("decay parameters must be non-negative")


@dataclass(frozen=True)
class FieldGrid:
    """Normalized amplitude field sampled on a resolution x resolution grid.

    Cell (i, j) holds the amplitude at (x_i, y_j) where the coordinates are
    the cell centers of a uniform partition of [-1, 1] (see grid_coordinates).
    After construction max |values| == 1.
    """

    resolution: int
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape != (self.resolution, self.resolution):
            raise ValueError("FieldGrid values must be square with the stated resolution")


@dataclass(frozen=True)
class NodalMask:
    """Boolean grid marking cells where particles accumulate (low |amplitude|),
    excluding a disk around the plate center."""

    resolution: int
    cells: np.ndarray
    quantile: float
    center_radius_norm: float

    def __post_init__(self):
        if self.cells.shape != (self.resolution, self.resolution):
            raise ValueError("NodalMask cells must be square with the stated resolution")
        if self.cells.dtype != np.bool_:
            raise ValueError("NodalMask cells must be boolean")

    def true_count(self) -> int:
        return int(self.cells.sum())


def bending_stiffness(spec: PlateSpec) -> float:
    """Bending stiffness D = E h^3 / (12 (1 - nu^2)) in N*m."""
    return spec.elastic_modulus * spec.thickness**3 / (12.0 * (1.0 - spec.poisson_ratio**2))


def natural_frequency(spec: PlateSpec, lam: float) -> float:
    """Natural frequency in Hz for dimensionless mode coefficient ``lam``.

    f = lam / (2 pi a^2) * sqrt(D / (rho h))

    The coefficient has no closed form for fully free edges; calibrated
    values come from the mode registry.
    """
    if lam < 0:
        raise ValueError("mode coefficient must be non-negative")
    d = bending_stiffness(spec)
    f = lam / (2.0 * math.pi * spec.side_length**2) * math.sqrt(
        d / (spec.density * spec.thickness)
    )
    if not math.isfinite(f):
        raise ValueError(f"natural frequency is not finite (lam={lam})")
    return f


def mode_shape(order: ModeOrder, x, y):
    """Antisymmetric mode shape on the normalized plate, zero at the center.

    w(x, y) = sin(n pi x) sin(m pi y) - sin(m pi x) sin(n pi y)

    Accepts scalars or arrays; broadcasts like numpy.
    """
    n, m = order.n, order.m
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    w = np.sin(n * np.pi * x) * np.sin(m * np.pi * y) - np.sin(m * np.pi * x) * np.sin(
        n * np.pi * y
    )
    if w.ndim == 0:
        return float(w)
    return w


def grid_coordinates(resolution: int) -> np.ndarray:
    """Cell-center coordinates of a uniform resolution-cell partition of [-1, 1].

    x_i = -1 + (2 i + 1) / resolution, which never samples the boundary.
    """
    i = np.arange(resolution, dtype=np.float64)
    return -1.0 + (2.0 * i + 1.0) / resolution


def amplitude_field(order: ModeOrder, resolution: int, decay: DecayParams) -> FieldGrid:
    """Corrected, normalized amplitude field for one mode.

    The raw shape is multiplied by exp(-central_decay * r) with
    r = sqrt(x^2 + y^2) and by exp(-edge_damping * (|x| + |y|)), then the
    whole grid is divided by its maximum absolute value.
    """
    if resolution < 16:
        raise ValueError("resolution must be at least 16")
    c = grid_coordinates(resolution)
    x = c[:, None]
    y = c[None, :]
    w = mode_shape(order, x, y)
    r = np.hypot(x, y)
    w = w * np.exp(-decay.central_decay * r) * np.exp(-decay.edge_damping * (np.abs(x) + np.abs(y)))
    peak = float(np.abs(w).max())
    if peak == 0.0:
        raise ValueError("amplitude field is identically zero")
    return FieldGrid(resolution=resolution, values=w / peak)


def center_exclusion_norm(spec: PlateSpec = PlateSpec(),
                          radius_m: float = CENTER_EXCLUSION_RADIUS_M) -> float:
    """Physical exclusion radius expressed in the [-1, 1] plate coordinates
    (the half side maps to 1)."""
    return radius_m / (spec.side_length / 2.0)


def nodal_mask(field: FieldGrid, quantile: float = 0.15,
               center_radius_norm: float | None = None) -> NodalMask:
    """Cells where |amplitude| falls below the empirical quantile.

    The threshold Q is the linear-interpolation quantile of |values| over all
    cells; a cell is marked iff |value| < Q (strictly) and its center lies at
    least center_radius_norm from the origin. The default exclusion radius is
    3 mm on the default 160 mm plate, i.e. 0.0375 in normalized units.
    """
    if not 0.0 < quantile < 1.0:
        raise ValueError("quantile must lie in (0, 1)")
    if center_radius_norm is None:
        center_radius_norm = center_exclusion_norm()
    if not 0.0 <= center_radius_norm < 1.0:
        raise ValueError("center_radius_norm must lie in [0, 1)")
    absv = np.abs(field.values)
    if absv.max() == absv.min():
        raise ValueError("quantile of a constant field is degenerate")
    threshold = float(np.quantile(absv, quantile))
    c = grid_coordinates(field.resolution)
    dist = np.hypot(c[:, None], c[None, :])
    cells = (absv < threshold) & (dist >= center_radius_norm)
    return NodalMask(
        resolution=field.resolution,
        cells=cells,
        quantile=quantile,
        center_radius_norm=center_radius_norm,
    )


# 8-connectivity: diagonal neighbors belong to the same line.
_EIGHT_CONNECTED = np.ones((3, 3), dtype=int)


def nodal_line_count(mask: NodalMask) -> int:
    """Number of 8-connected components of marked cells."""
    _, count = ndimage.label(mask.cells, structure=_EIGHT_CONNECTED)
    return int(count)
