"""
Truncated velocity-space lattice, quadrature, dyadic cube families, and
canonical initial profiles.

Nodes are cell centers, v_i = -L + (i + 1/2) * spacing, so no node ever sits
at the origin and power-law kernels stay finite on the lattice.  All integrals
are midpoint quadrature: spacing^d times a node sum.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    EmptyRegionError,
    GridError,
    MemoryCapError,
    MisalignedCubeError,
    NonNegativityError,
    SnapshotFormatError,
)

#: refuse to allocate lattices above this node count
DEFAULT_NODE_CAP = 2**25

_SNAPSHOT_MAGIC = b"LLF1"


@dataclass(frozen=True)
class VelocityGrid:
    """
    Uniform cell-centered lattice on [-L, L]^d.

    Attributes
    ----------
    dim : int
        Spatial dimension d >= 1.
    half_extent : float
        Domain half width L > 0.
    points_per_axis : int
        Even node count N >= 4 per axis.
    """

    dim: int
    half_extent: float
    points_per_axis: int

    def __post_init__(self):
        if self.dim < 1:
            raise GridError(f"dim must be >= 1, got {self.dim}")
        if self.half_extent <= 0:
            raise GridError(f"half_extent must be > 0, got {self.half_extent}")
        n = self.points_per_axis
        if n < 4 or n % 2 != 0:
            raise GridError(f"points_per_axis must be even and >= 4, got {n}")

    @property
    def spacing(self) -> float:
        return 2.0 * self.half_extent / self.points_per_axis

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.points_per_axis,) * self.dim

    @property
    def n_nodes(self) -> int:
        return self.points_per_axis**self.dim

    @property
    def axis(self) -> np.ndarray:
        """1-D node coordinates along one axis (cell centers)."""
        i = np.arange(self.points_per_axis)
        return -self.half_extent + (i + 0.5) * self.spacing

    def coords(self) -> tuple[np.ndarray, ...]:
        """Broadcastable coordinate arrays, one per axis."""
        out = []
        for ax in range(self.dim):
            shape = [1] * self.dim
            shape[ax] = self.points_per_axis
            out.append(self.axis.reshape(shape))
        return tuple(out)

    def radius_squared(self) -> np.ndarray:
        r2 = np.zeros(self.shape)
        for c in self.coords():
            r2 = r2 + c**2
        return r2

    def radius(self) -> np.ndarray:
        return np.sqrt(self.radius_squared())

    def key(self) -> tuple:
        return (self.dim, float(self.half_extent), self.points_per_axis)


@dataclass
class ScalarField:
    """Real values on a velocity grid, one per node."""

    grid: VelocityGrid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise GridError(
                f"field shape {self.values.shape} does not match grid {self.grid.shape}"
            )

    def copy(self) -> "ScalarField":
        return ScalarField(self.grid, self.values.copy())

    def require_density(self, what: str = "field"):
        if np.any(self.values < 0):
            raise NonNegativityError(f"{what} has negative node values")

    def content_hash(self) -> str:
        return hashlib.sha256(np.ascontiguousarray(self.values).tobytes()).hexdigest()


@dataclass(frozen=True)
class Cube:
    """Lattice-aligned cube: a block of whole cells.

    ``anchor`` is the lowest-index corner cell, ``n_cells`` the cell count per
    axis, ``level`` the dyadic refinement depth it came from.
    """

    anchor: tuple[int, ...]
    n_cells: int
    level: int = 0

    def side(self, grid: VelocityGrid) -> float:
        return self.n_cells * grid.spacing

    def center(self, grid: VelocityGrid) -> np.ndarray:
        lo = np.array(self.anchor, dtype=float) * grid.spacing - grid.half_extent
        return lo + 0.5 * self.n_cells * grid.spacing

    def volume(self, grid: VelocityGrid) -> float:
        return self.side(grid) ** grid.dim

    def slices(self) -> tuple[slice, ...]:
        return tuple(slice(a, a + self.n_cells) for a in self.anchor)


@dataclass(frozen=True)
class Ball:
    """Closed ball region; membership is decided by node centers."""

    center: tuple[float, ...]
    radius: float


@dataclass
class CubeSet:
    """Dyadic hierarchy of lattice-aligned cubes.

    Level-0 cubes tile the whole box with side ``base_side``; level-k cubes
    have side ``base_side / 2**k`` and children tile their parent exactly.
    """

    grid: VelocityGrid
    base_side: float
    levels: int
    cubes: list[Cube] = field(default_factory=list)

    def by_level(self, level: int) -> list[Cube]:
        return [c for c in self.cubes if c.level == level]

    def __len__(self) -> int:
        return len(self.cubes)


def make_grid(
    dim: int, half_extent: float, points_per_axis: int, node_cap: int = DEFAULT_NODE_CAP
) -> VelocityGrid:
    """Build a cell-centered velocity lattice, rejecting odd N and oversized requests."""
    g = VelocityGrid(dim, float(half_extent), int(points_per_axis))
    if g.n_nodes > node_cap:
        raise MemoryCapError(
            f"lattice with {g.n_nodes} nodes exceeds the cap of {node_cap}"
        )
    return g


def _region_mask(field_grid: VelocityGrid, region) -> np.ndarray | None:
    """Boolean node mask for a region; None means the whole grid."""
    if region == "all" or region is None:
        return None
    if isinstance(region, Ball):
        center = np.asarray(region.center, dtype=float)
        if center.shape != (field_grid.dim,):
            raise GridError(f"ball center must have {field_grid.dim} components")
        r2 = np.zeros(field_grid.shape)
        for ax, c in enumerate(field_grid.coords()):
            r2 = r2 + (c - center[ax]) ** 2
        return r2 <= region.radius**2
    if isinstance(region, Cube):
        mask = np.zeros(field_grid.shape, dtype=bool)
        mask[region.slices()] = True
        return mask
    raise GridError(f"unsupported region {region!r}")


def integrate(f: ScalarField, region="all") -> float:
    """Midpoint quadrature of ``f`` over a region (whole box, ball, or cube)."""
    mask = _region_mask(f.grid, region)
    w = f.grid.spacing**f.grid.dim
    if mask is None:
        return w * float(np.sum(f.values))
    if not mask.any():
        raise EmptyRegionError(f"region {region!r} contains no lattice nodes")
    return w * float(np.sum(f.values[mask]))


def cube_average(f: ScalarField, cube: Cube) -> float:
    """Mean of ``f`` over the cube (the barred integral)."""
    if cube.n_cells < 1:
        raise EmptyRegionError("cube contains no cells")
    block = f.values[cube.slices()]
    if block.size == 0:
        raise EmptyRegionError(f"cube {cube} lies outside the grid")
    return float(np.mean(block))


def make_dyadic_cubes(grid: VelocityGrid, base_side: float, levels: int) -> CubeSet:
    """
    Lattice-aligned tiling by cubes of side ``base_side`` plus all dyadic
    refinements down to ``levels`` generations.
    """
    h = grid.spacing
    cells = base_side / h
    cells_int = int(round(cells))
    if abs(cells - cells_int) > 1e-9 * max(1.0, cells) or cells_int < 1:
        raise MisalignedCubeError(
            f"base_side {base_side} is not a multiple of spacing {h}"
        )
    per_axis = grid.points_per_axis / cells_int
    if abs(per_axis - round(per_axis)) > 1e-9:
        raise MisalignedCubeError(
            f"base_side {base_side} does not tile the box [-L, L]^d"
        )
    if levels < 0:
        raise MisalignedCubeError("levels must be >= 0")
    smallest = cells_int // 2**levels
    if cells_int % 2**levels != 0 or smallest < 2:
        raise MisalignedCubeError(
            f"level-{levels} cubes would not hold >= 2^d whole cells"
        )

    cubes: list[Cube] = []
    for level in range(levels + 1):
        m = cells_int // 2**level
        anchors = np.arange(0, grid.points_per_axis, m)
        grids = np.meshgrid(*([anchors] * grid.dim), indexing="ij")
        for anchor in zip(*(g.ravel() for g in grids)):
            cubes.append(Cube(tuple(int(a) for a in anchor), m, level))
    return CubeSet(grid, float(base_side), levels, cubes)


def moments(f: ScalarField) -> tuple[float, np.ndarray, float]:
    """(mass, momentum vector, energy) by midpoint quadrature."""
    w = f.grid.spacing**f.grid.dim
    mass = w * float(np.sum(f.values))
    mom = np.array(
        [w * float(np.sum(f.values * c)) for c in f.grid.coords()]
    )
    energy = w * float(np.sum(f.values * f.grid.radius_squared()))
    return mass, mom, energy


def _renormalize_isotropic(grid: VelocityGrid, sampler) -> ScalarField:
    """
    Rescale an isotropic profile family ``sampler(scale)`` so the discrete
    moments are (1, 0, d), solving for the velocity scale by bisection and
    normalizing mass by division.
    """
    from scipy.optimize import brentq

    r2 = grid.radius_squared()

    def ratio(s: float) -> float:
        vals = sampler(s, r2)
        m = float(np.sum(vals))
        e = float(np.sum(vals * r2))
        return e / m - grid.dim

    lo, hi = 0.25, 4.0
    flo, fhi = ratio(lo), ratio(hi)
    while flo > 0 and lo > 1e-4:
        lo *= 0.5
        flo = ratio(lo)
    while fhi < 0 and hi < 1e4:
        hi *= 2.0
        fhi = ratio(hi)
    if flo > 0 or fhi < 0:
        raise GridError("cannot match the energy moment on this grid")
    s = brentq(ratio, lo, hi, xtol=1e-14, rtol=8.9e-16)
    vals = sampler(s, r2)
    vals = vals / (float(np.sum(vals)) * grid.spacing**grid.dim)
    return ScalarField(grid, vals)


def maxwellian(grid: VelocityGrid) -> ScalarField:
    """
    Gaussian equilibrium sampled at nodes, then rescaled so the discrete
    moments are exactly (mass, mean, energy) = (1, 0, d).
    """

    def sampler(s, r2):
        return np.exp(-r2 / (2.0 * s))

    return _renormalize_isotropic(grid, sampler)


def squeezed_gaussian(grid: VelocityGrid, sigma: float, narrow_mass: float = 0.8) -> ScalarField:
    """
    Concentrated initial profile: a blend of a narrow isotropic Gaussian
    (width ``sigma``, carrying the ``narrow_mass`` fraction) and a wide one
    chosen so the pair carries total energy d, then discretely renormalized
    to moments (1, 0, d).

    The narrow component makes the sup norm large while the wide component
    keeps the energy at its reference value, so relaxation toward equilibrium
    is visible in the running maximum.
    """
    if not 0 < sigma < 1:
        raise GridError(f"sigma must lie in (0, 1), got {sigma}")
    if not 0 < narrow_mass < 1:
        raise GridError(f"narrow_mass must lie in (0, 1), got {narrow_mass}")
    mu = narrow_mass
    tau2 = (1.0 - mu * sigma**2) / (1.0 - mu)

    def sampler(s, r2):
        a = mu * np.exp(-r2 / (2.0 * s * sigma**2)) / (sigma**2) ** (grid.dim / 2)
        b = (1.0 - mu) * np.exp(-r2 / (2.0 * s * tau2)) / tau2 ** (grid.dim / 2)
        return a + b

    return _renormalize_isotropic(grid, sampler)


def counterexample_profile(grid: VelocityGrid, m: float) -> ScalarField:
    """
    Unit-mass density |v|^(-m) restricted to the unit ball.  For m close to d
    this is the near-critical spike whose reaction coefficient stays of the
    same order as the diffusion on every scale.
    """
    if not 0 <= m < grid.dim:
        raise GridError(f"m must lie in [0, d), got {m} at d = {grid.dim}")
    r = grid.radius()
    vals = np.where(r <= 1.0, r ** (-m) if m > 0 else np.ones_like(r), 0.0)
    total = float(np.sum(vals)) * grid.spacing**grid.dim
    if total <= 0:
        raise EmptyRegionError("unit ball contains no lattice nodes")
    return ScalarField(grid, vals / total)


def shell_profile(grid: VelocityGrid, radius: float = 2.0, width: float = 0.25) -> ScalarField:
    """Thin spherical shell (Gaussian in |v| - radius), unit mass."""
    if radius <= 0 or width <= 0:
        raise GridError("shell radius and width must be positive")
    r = grid.radius()
    vals = np.exp(-(((r - radius) / width) ** 2))
    total = float(np.sum(vals)) * grid.spacing**grid.dim
    if total <= 0:
        raise EmptyRegionError("shell misses every lattice node")
    return ScalarField(grid, vals / total)


def random_density(grid: VelocityGrid, rng: np.random.Generator, n_modes: int = 4) -> ScalarField:
    """
    Seeded random smooth density: a squared low-mode trigonometric sum under a
    Gaussian envelope, unit mass.
    """
    L = grid.half_extent
    coords = grid.coords()
    wave = np.zeros(grid.shape)
    for _ in range(n_modes):
        k = rng.integers(-3, 4, size=grid.dim)
        phase = rng.uniform(0, 2 * np.pi)
        amp = rng.uniform(0.3, 1.0)
        arg = np.zeros(grid.shape)
        for ax in range(grid.dim):
            arg = arg + (np.pi / L) * k[ax] * coords[ax]
        wave = wave + amp * np.cos(arg + phase)
    vals = (wave**2 + 0.05) * np.exp(-grid.radius_squared() / 2.0)
    total = float(np.sum(vals)) * grid.spacing**grid.dim
    return ScalarField(grid, vals / total)


def write_field(path, f: ScalarField):
    """Write the binary snapshot: magic "LLF1", dim, N, L (little-endian 64-bit), then float64 values in C order."""
    header = _SNAPSHOT_MAGIC + struct.pack(
        "<qqd", f.grid.dim, f.grid.points_per_axis, f.grid.half_extent
    )
    payload = np.ascontiguousarray(f.values, dtype="<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)


def read_field(path) -> ScalarField:
    """Read a binary snapshot written by :func:`write_field`."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 28 or blob[:4] != _SNAPSHOT_MAGIC:
        raise SnapshotFormatError(f"{path}: bad magic string")
    dim, n, L = struct.unpack("<qqd", blob[4:28])
    if dim < 1 or n < 4:
        raise SnapshotFormatError(f"{path}: nonsensical header (dim={dim}, N={n})")
    expected = 28 + 8 * n**dim
    if len(blob) != expected:
        raise SnapshotFormatError(
            f"{path}: payload size {len(blob)} does not match header ({expected})"
        )
    grid = make_grid(int(dim), float(L), int(n))
    values = np.frombuffer(blob[28:], dtype="<f8").reshape(grid.shape).copy()
    return ScalarField(grid, values)
