"""Simulation geometry: uniform grids, PML annotations and permittivity maps.

Lengths are measured in units of the lattice constant ``a`` (``a = 1``) and the
vacuum wave speed is 1, so an angular frequency ``omega`` corresponds to the
reduced frequency ``omega / (2 pi)`` in units of ``2 pi c / a``.

Arrays over the grid are indexed ``[i, j]`` with ``i`` along x and ``j`` along
y; node ``(i, j)`` sits at ``origin + (i * dx, j * dx)``.
"""

from __future__ import annotations

import hashlib
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Tuple

import numpy as np

DEFAULT_RESOLUTION = 32
DEFAULT_SUBPIXEL = 8


class GeometryError(ValueError):
    """Raised for invalid or inconsistent geometry specifications."""


@dataclass(frozen=True)
class PmlSpec:
    """Perfectly matched layer applied on all four sides of the grid.

    Attributes:
        thickness_cells: Number of PML cells on each side.
        polynomial_order: Order of the polynomial conductivity grading.
        target_reflection: Normal-incidence round-trip reflection the grading
            is designed for.
    """

    thickness_cells: int = 16
    polynomial_order: int = 3
    target_reflection: float = 1e-8

    def __post_init__(self):
        if self.thickness_cells < 8:
            raise GeometryError("PML needs at least 8 cells per side")
        if not 2 <= self.polynomial_order <= 4:
            raise GeometryError("PML polynomial order must lie in [2, 4]")
        if not 0.0 < self.target_reflection < 1.0:
            raise GeometryError("PML target reflection must lie in (0, 1)")


@dataclass(frozen=True)
class Grid:
    """Uniform 2D grid of ``nx * ny`` nodes with spacing ``dx``."""

    nx: int
    ny: int
    dx: float
    origin: Tuple[float, float] = (0.0, 0.0)
    pml: PmlSpec = field(default_factory=PmlSpec)

    def __post_init__(self):
        if self.nx < 16 or self.ny < 16:
            raise GeometryError("grid needs at least 16 cells along each axis")
        if not self.dx > 0:
            raise GeometryError("dx must be positive")
        npml = self.pml.thickness_cells
        if self.nx - 2 * npml < 1 or self.ny - 2 * npml < 1:
            raise GeometryError("PML leaves no interior region")
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))

    @classmethod
    def centered(cls, width: float, height: Optional[float] = None,
                 resolution: int = DEFAULT_RESOLUTION,
                 pml: Optional[PmlSpec] = None) -> "Grid":
        """Grid whose PML-free interior covers ``[-width/2, width/2] x [-height/2, height/2]``.

        The node counts are odd so that the physical origin is a grid node.
        """
        pml = pml or PmlSpec()
        height = width if height is None else height
        dx = 1.0 / resolution
        half_x = int(np.ceil(0.5 * width * resolution - 1e-9))
        half_y = int(np.ceil(0.5 * height * resolution - 1e-9))
        nx = 2 * (half_x + pml.thickness_cells) + 1
        ny = 2 * (half_y + pml.thickness_cells) + 1
        origin = (-(nx // 2) * dx, -(ny // 2) * dx)
        return cls(nx=nx, ny=ny, dx=dx, origin=origin, pml=pml)

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.nx, self.ny)

    @property
    def x(self) -> np.ndarray:
        return self.origin[0] + self.dx * np.arange(self.nx)

    @property
    def y(self) -> np.ndarray:
        return self.origin[1] + self.dx * np.arange(self.ny)

    @property
    def npml(self) -> int:
        return self.pml.thickness_cells

    def interior_bounds(self) -> Tuple[float, float, float, float]:
        """Physical extent ``(xmin, xmax, ymin, ymax)`` of the PML-free nodes."""
        n = self.npml
        x, y = self.x, self.y
        return (x[n], x[self.nx - n - 1], y[n], y[self.ny - n - 1])

    def in_interior(self, i: int, j: int) -> bool:
        n = self.npml
        return n <= i < self.nx - n and n <= j < self.ny - n

    def nearest_index(self, point: Sequence[float]) -> Tuple[int, int]:
        i = int(np.rint((point[0] - self.origin[0]) / self.dx))
        j = int(np.rint((point[1] - self.origin[1]) / self.dx))
        return i, j

    def position(self, index: Tuple[int, int]) -> np.ndarray:
        return np.array([self.origin[0] + index[0] * self.dx,
                         self.origin[1] + index[1] * self.dx])

    def flat_index(self, index: Tuple[int, int]) -> int:
        return index[0] * self.ny + index[1]

    def mesh(self) -> Tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.x, self.y, indexing="ij")


@dataclass(frozen=True, eq=False)
class PermittivityMap:
    """Real, positive relative permittivity sampled on the nodes of a grid.

    The PML and the first interior ring next to it must hold the background
    value, so the medium is homogeneous where waves leave the domain.
    """

    grid: Grid
    eps: np.ndarray
    eps_background: float = 1.0

    def __post_init__(self):
        eps = np.array(self.eps, dtype=float, copy=True)
        if eps.shape != self.grid.shape:
            raise GeometryError(f"eps has shape {eps.shape}, grid is {self.grid.shape}")
        if not self.eps_background > 0:
            raise GeometryError("background permittivity must be positive")
        if not np.all(np.isfinite(eps)) or np.any(eps <= 0):
            raise GeometryError("permittivity must be finite and positive everywhere")
        n = self.grid.npml + 1
        border = np.ones(eps.shape, dtype=bool)
        border[n:-n, n:-n] = False
        if np.any(eps[border] != self.eps_background):
            raise GeometryError("permittivity must equal the background in the PML "
                                "and on the interior cells adjacent to it")
        eps.flags.writeable = False
        object.__setattr__(self, "eps", eps)

    @property
    def is_homogeneous(self) -> bool:
        return bool(np.all(self.eps == self.eps_background))

    def content_hash(self) -> str:
        """SHA-256 over the grid description and the permittivity values."""
        g = self.grid
        h = hashlib.sha256()
        header = (f"{g.nx} {g.ny} {g.dx!r} {g.origin[0]!r} {g.origin[1]!r} "
                  f"{g.pml.thickness_cells} {g.pml.polynomial_order} "
                  f"{g.pml.target_reflection!r} {self.eps_background!r}")
        h.update(header.encode())
        h.update(np.ascontiguousarray(self.eps, dtype="<f8").tobytes())
        return h.hexdigest()

    def contrast(self) -> np.ndarray:
        return self.eps - self.eps_background


@dataclass(frozen=True)
class CylinderLattice:
    """Square lattice of dielectric rods with one rod replaced by a defect.

    Attributes:
        rows, cols: Lattice size.
        rod_radius: Radius of the regular rods (units of ``a``).
        defect_radius: Radius of the defect rod.
        rod_eps: Permittivity of all rods.
        defect_position: ``(row, col)`` of the defect; defaults to the center.
        lattice_constant: Spacing between rods.
        center: Physical position of the lattice center.
    """

    rows: int = 9
    cols: int = 9
    rod_radius: float = 0.2
    defect_radius: float = 0.65
    rod_eps: float = 8.9
    defect_position: Optional[Tuple[int, int]] = None
    lattice_constant: float = 1.0
    center: Tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        a = self.lattice_constant
        for r in (self.rod_radius, self.defect_radius):
            if not 0.0 < r < a / np.sqrt(2.0):
                raise GeometryError(f"radius {r} outside (0, a/sqrt(2))")
        if self.rod_eps < 1.0:
            raise GeometryError("rod permittivity must be >= 1")
        if self.rows < 1 or self.cols < 1:
            raise GeometryError("lattice needs at least one row and column")
        if self.defect_position is None:
            object.__setattr__(self, "defect_position", (self.rows // 2, self.cols // 2))
        r, c = self.defect_position
        if not (0 <= r < self.rows and 0 <= c < self.cols):
            raise GeometryError("defect position outside the lattice")

    def rods(self):
        """Yields ``(x, y, radius)`` for every rod."""
        a = self.lattice_constant
        for r in range(self.rows):
            for c in range(self.cols):
                x = self.center[0] + (c - (self.cols - 1) / 2) * a
                y = self.center[1] + (r - (self.rows - 1) / 2) * a
                radius = self.defect_radius if (r, c) == tuple(self.defect_position) else self.rod_radius
                yield x, y, radius

    @property
    def defect_center(self) -> np.ndarray:
        a = self.lattice_constant
        r, c = self.defect_position
        return np.array([self.center[0] + (c - (self.cols - 1) / 2) * a,
                         self.center[1] + (r - (self.rows - 1) / 2) * a])

    def high_index_area(self) -> float:
        """Exact total rod area."""
        return (self.rows * self.cols * np.pi * self.rod_radius ** 2
                + np.pi * (self.defect_radius ** 2 - self.rod_radius ** 2))


def build_homogeneous(grid: Grid, eps0: float = 1.0) -> PermittivityMap:
    """Uniform permittivity ``eps0`` over the whole grid."""
    if not eps0 > 0:
        raise GeometryError("eps0 must be positive")
    return PermittivityMap(grid, np.full(grid.shape, float(eps0)), float(eps0))


def _disk_fraction(grid: Grid, cx: float, cy: float, radius: float, nsub: int):
    """Fraction of each node's cell covered by a disk, by uniform sub-sampling.

    Returns the index window and the fraction array over it.
    """
    dx = grid.dx
    i0 = max(int(np.floor((cx - radius - grid.origin[0]) / dx)) - 1, 0)
    i1 = min(int(np.ceil((cx + radius - grid.origin[0]) / dx)) + 2, grid.nx)
    j0 = max(int(np.floor((cy - radius - grid.origin[1]) / dx)) - 1, 0)
    j1 = min(int(np.ceil((cy + radius - grid.origin[1]) / dx)) + 2, grid.ny)
    offsets = (np.arange(nsub) + 0.5) / nsub - 0.5
    xs = (grid.origin[0] + dx * np.arange(i0, i1))[:, None] + dx * offsets[None, :]
    ys = (grid.origin[1] + dx * np.arange(j0, j1))[:, None] + dx * offsets[None, :]
    ddx = (xs - cx) ** 2
    ddy = (ys - cy) ** 2
    inside = ddx[:, None, :, None] + ddy[None, :, None, :] <= radius ** 2
    frac = inside.mean(axis=(2, 3))
    return (slice(i0, i1), slice(j0, j1)), frac


def build_crystal(spec: CylinderLattice, grid: Grid, eps0: float = 1.0,
                  subpixel: int = DEFAULT_SUBPIXEL) -> PermittivityMap:
    """Rasterize a rod lattice with area-fraction sub-pixel smoothing.

    Each node's permittivity is ``eps0 + (rod_eps - eps0) * f`` where ``f`` is
    the fraction of its ``dx * dx`` cell covered by rods, estimated on a
    ``subpixel x subpixel`` sample pattern.

    Raises:
        GeometryError: if the lattice plus a 1a homogeneous margin does not fit
            inside the PML-free interior.
    """
    if not eps0 > 0:
        raise GeometryError("eps0 must be positive")
    xmin, xmax, ymin, ymax = grid.interior_bounds()
    margin = spec.lattice_constant
    rods = list(spec.rods())
    for x, y, r in rods:
        if (x - r - margin < xmin or x + r + margin > xmax
                or y - r - margin < ymin or y + r + margin > ymax):
            raise GeometryError("lattice does not fit inside the interior with a 1a margin")
    fill = np.zeros(grid.shape)
    for x, y, r in rods:
        window, frac = _disk_fraction(grid, x, y, r, subpixel)
        fill[window] += frac
    np.clip(fill, 0.0, 1.0, out=fill)
    eps = eps0 + (spec.rod_eps - eps0) * fill
    return PermittivityMap(grid, eps, float(eps0))


def emitter_site(pmap: PermittivityMap, x_d: Sequence[float]) -> Tuple[int, int]:
    """Grid node nearest to the emitter position ``x_d``.

    Warns when the node does not hold the background permittivity.
    """
    grid = pmap.grid
    i, j = grid.nearest_index(x_d)
    if not (0 <= i < grid.nx and 0 <= j < grid.ny):
        raise GeometryError(f"emitter position {tuple(x_d)} lies outside the grid")
    if not grid.in_interior(i, j):
        raise GeometryError(f"emitter position {tuple(x_d)} lies inside the PML")
    if pmap.eps[i, j] != pmap.eps_background:
        warnings.warn(f"emitter node {(i, j)} has eps={pmap.eps[i, j]:.4g}, "
                      f"background is {pmap.eps_background:.4g}", stacklevel=2)
    return i, j


def load_raster(path, pml: Optional[PmlSpec] = None, eps0: float = 1.0,
                origin: Optional[Tuple[float, float]] = None) -> PermittivityMap:
    """Read a plain-text permittivity raster.

    The first line holds ``nx ny dx``; the remaining whitespace-separated
    values are the permittivities in row-major ``[i, j]`` order. Without an
    explicit ``origin`` the grid is centered on (0, 0).
    """
    text = Path(path).read_text().split()
    if len(text) < 3:
        raise GeometryError(f"{path}: missing 'nx ny dx' header")
    nx, ny, dx = int(text[0]), int(text[1]), float(text[2])
    values = np.array(text[3:], dtype=float)
    if values.size != nx * ny:
        raise GeometryError(f"{path}: expected {nx * ny} values, found {values.size}")
    if origin is None:
        origin = (-0.5 * (nx - 1) * dx, -0.5 * (ny - 1) * dx)
    grid = Grid(nx, ny, dx, origin, pml or PmlSpec())
    return PermittivityMap(grid, values.reshape(nx, ny), eps0)


def save_raster(pmap: PermittivityMap, path) -> None:
    g = pmap.grid
    with open(path, "w") as f:
        f.write(f"{g.nx} {g.ny} {g.dx!r}\n")
        np.savetxt(f, pmap.eps, fmt="%.17g")
