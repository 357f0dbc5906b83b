"""
Weight functionals over finite cube families: Muckenhoupt constants, reverse
Hölder constants, local doubling, the cube ratio coupling the reaction and
diffusion coefficients, and the two-weight Sobolev cube functionals.

All suprema run over explicit lattice-aligned families (deterministic and
reproducible); cube averages are box sums off an integral image, so a full
family costs one cumulative-sum pass plus O(1) per cube.
"""

from __future__ import annotations

import csv
import itertools
import json
from dataclasses import dataclass, field

import numpy as np
from scipy import signal

from .errors import EmptyRegionError, MisalignedCubeError, NonNegativityError, WeightPositivityError
from .grid import Cube, CubeSet, ScalarField, VelocityGrid

#: cubes whose weight integral falls below this fraction of the global one
#: are excluded from suprema (and counted) instead of emitting infinities
DEGENERATE_FRACTION = 1e-14


@dataclass
class WeightReport:
    """One measured weight constant with its witness cube."""

    weight_id: str
    constant_name: str
    value: float
    argmax_cube: int | None
    cube_set: dict
    parameters: dict
    excluded_cubes: int = 0
    clipped: bool = False
    per_cube: np.ndarray | None = None

    def to_dict(self) -> dict:
        return {
            "weight_id": self.weight_id,
            "constant_name": self.constant_name,
            "value": self.value,
            "argmax_cube": self.argmax_cube,
            "cube_set": self.cube_set,
            "parameters": self.parameters,
            "excluded_cubes": self.excluded_cubes,
            "clipped": self.clipped,
        }

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def per_cube_csv(self, path, cubes: CubeSet):
        if self.per_cube is None:
            raise ValueError("report carries no per-cube values")
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["cube_index", "level", "side", "value"])
            for k, (cube, val) in enumerate(zip(cubes.cubes, self.per_cube)):
                writer.writerow([k, cube.level, repr(cube.side(cubes.grid)), repr(float(val))])


class BoxSums:
    """Integral image giving O(1) sums of any cell-aligned box."""

    def __init__(self, values: np.ndarray):
        table = values
        for ax in range(values.ndim):
            table = np.cumsum(table, axis=ax)
        self.table = np.pad(table, [(1, 0)] * values.ndim)
        self.ndim = values.ndim

    def block_sum(self, anchors: np.ndarray, m: int) -> np.ndarray:
        """Sums over blocks [a, a+m) per axis for an (K, d) anchor array."""
        acc = np.zeros(anchors.shape[0])
        for corner in itertools.product((0, 1), repeat=self.ndim):
            idx = tuple(anchors[:, ax] + (m if corner[ax] else 0) for ax in range(self.ndim))
            sign = (-1) ** (self.ndim - sum(corner))
            acc += sign * self.table[idx]
        return acc


def _family_by_level(cubes: CubeSet) -> list[tuple[int, np.ndarray, np.ndarray]]:
    """Group the family into (n_cells, anchor array, cube index array) per size."""
    sizes: dict[int, list[tuple[int, tuple]]] = {}
    for k, cube in enumerate(cubes.cubes):
        sizes.setdefault(cube.n_cells, []).append((k, cube.anchor))
    out = []
    for m, entries in sorted(sizes.items()):
        idx = np.array([k for k, _ in entries])
        anchors = np.array([a for _, a in entries])
        out.append((m, anchors, idx))
    return out


def cube_family_averages(values: np.ndarray, cubes: CubeSet) -> np.ndarray:
    """Mean of ``values`` over every cube of the family, in family order."""
    sums = BoxSums(values)
    nonneg = bool(np.all(values >= 0))
    out = np.empty(len(cubes))
    for m, anchors, idx in _family_by_level(cubes):
        block = sums.block_sum(anchors, m)
        if nonneg:
            # integral-image cancellation can leave tiny negatives
            block = np.maximum(block, 0.0)
        out[idx] = block / float(m**values.ndim)
    return out


def cube_family_minima(values: np.ndarray, cubes: CubeSet) -> np.ndarray:
    """Minimum of ``values`` over every cube, via separable window minima."""
    out = np.empty(len(cubes))
    for m, anchors, idx in _family_by_level(cubes):
        pooled = values
        for ax in range(values.ndim):
            pooled = np.lib.stride_tricks.sliding_window_view(pooled, m, axis=ax).min(axis=-1)
        out[idx] = pooled[tuple(anchors[:, ax] for ax in range(values.ndim))]
    return out


def _cube_set_summary(cubes: CubeSet) -> dict:
    return {
        "base_side": cubes.base_side,
        "levels": cubes.levels,
        "count": len(cubes),
        "grid": list(cubes.grid.key()),
    }


def _check_positive_weight(w: ScalarField):
    bad = np.count_nonzero(w.values <= 0)
    if bad > 0:
        frac = bad / w.values.size
        raise WeightPositivityError(
            f"weight is nonpositive on {bad} nodes ({frac:.2e} of the grid)"
        )


def ap_constant(w: ScalarField, p: float, cubes: CubeSet, weight_id: str = "w") -> WeightReport:
    """Muckenhoupt constant: sup over cubes of avg(w) * avg(w^(-1/(p-1)))^(p-1)."""
    if p <= 1:
        raise ValueError(f"p must exceed 1, got {p}")
    _check_positive_weight(w)
    avg_w = cube_family_averages(w.values, cubes)
    avg_dual = cube_family_averages(w.values ** (-1.0 / (p - 1.0)), cubes)
    vals = avg_w * avg_dual ** (p - 1.0)
    k = int(np.argmax(vals))
    return WeightReport(
        weight_id=weight_id,
        constant_name="Ap",
        value=float(vals[k]),
        argmax_cube=k,
        cube_set=_cube_set_summary(cubes),
        parameters={"p": p},
        per_cube=vals,
    )


def a1_constant(w: ScalarField, cubes: CubeSet, weight_id: str = "w") -> WeightReport:
    """sup over cubes and their nodes of avg(w) / w(node) = avg(w) / min(w)."""
    _check_positive_weight(w)
    avg_w = cube_family_averages(w.values, cubes)
    min_w = cube_family_minima(w.values, cubes)
    vals = avg_w / min_w
    k = int(np.argmax(vals))
    return WeightReport(
        weight_id=weight_id,
        constant_name="A1",
        value=float(vals[k]),
        argmax_cube=k,
        cube_set=_cube_set_summary(cubes),
        parameters={},
        per_cube=vals,
    )


def reverse_holder(w: ScalarField, m: float, cubes: CubeSet, weight_id: str = "w") -> WeightReport:
    """sup over cubes of avg(w^m)^(1/m) / avg(w); all-zero cubes excluded and counted."""
    if m <= 0:
        raise ValueError(f"exponent m must be positive, got {m}")
    if np.any(w.values < 0):
        raise NonNegativityError("reverse Hölder weight must be nonnegative")
    avg_w = cube_family_averages(w.values, cubes)
    avg_wm = cube_family_averages(w.values**m, cubes)
    total = float(np.mean(w.values))
    alive = avg_w > DEGENERATE_FRACTION * max(total, np.finfo(float).tiny)
    vals = np.full(len(cubes), np.nan)
    vals[alive] = avg_wm[alive] ** (1.0 / m) / avg_w[alive]
    if not alive.any():
        raise EmptyRegionError("every cube is degenerate for this weight")
    k = int(np.nanargmax(vals))
    return WeightReport(
        weight_id=weight_id,
        constant_name=f"RH({m})",
        value=float(vals[k]),
        argmax_cube=k,
        cube_set=_cube_set_summary(cubes),
        parameters={"m": m},
        excluded_cubes=int(np.count_nonzero(~alive)),
        per_cube=vals,
    )


def _ball_offsets(grid: VelocityGrid, radius: float) -> np.ndarray:
    k = int(np.floor(radius / grid.spacing + 1e-12))
    ax = np.arange(-k, k + 1) * grid.spacing
    mesh = np.meshgrid(*([ax] * grid.dim), indexing="ij")
    r2 = sum(c**2 for c in mesh)
    return (r2 <= radius**2 + 1e-12).astype(float)


def ball_sum_field(f: ScalarField, radius: float) -> np.ndarray:
    """Integral of f over the ball of given radius centered at every node."""
    kernel = _ball_offsets(f.grid, radius)
    conv = signal.fftconvolve(f.values, kernel, mode="same")
    return conv * f.grid.spacing**f.grid.dim


def doubling_constant(
    f: ScalarField,
    radii=(0.25, 0.5, 1.0),
    centers_mask: np.ndarray | None = None,
    weight_id: str = "f",
) -> WeightReport:
    """
    sup over grid centers and radii of the mass ratio of the double ball to
    the ball.  Pairs whose inner integral is below 1e-14 of the total mass
    are excluded and counted.
    """
    f.require_density("doubling input")
    mass = float(np.sum(f.values)) * f.grid.spacing**f.grid.dim
    if mass <= 0:
        raise NonNegativityError("doubling constant of the zero density")
    for r in radii:
        if not 0 < r <= 1:
            raise ValueError(f"radii must lie in (0, 1], got {r}")
    best = -np.inf
    best_where: tuple | None = None
    excluded = 0
    for r in radii:
        inner = ball_sum_field(f, r)
        outer = ball_sum_field(f, 2.0 * r)
        alive = inner > DEGENERATE_FRACTION * mass
        if centers_mask is not None:
            alive &= centers_mask
        excluded += int(np.count_nonzero(~alive))
        if not alive.any():
            continue
        ratio = np.where(alive, outer / np.where(alive, inner, 1.0), -np.inf)
        k = int(np.argmax(ratio))
        if ratio.ravel()[k] > best:
            best = float(ratio.ravel()[k])
            best_where = (r, np.unravel_index(k, f.grid.shape))
    if best_where is None:
        raise EmptyRegionError("no admissible (center, radius) pair")
    return WeightReport(
        weight_id=weight_id,
        constant_name="C_D",
        value=best,
        argmax_cube=None,
        cube_set={"radii": list(radii)},
        parameters={"argmax_radius": best_where[0], "argmax_node": [int(i) for i in best_where[1]]},
        excluded_cubes=excluded,
    )


def morrey_ratio(
    h: ScalarField,
    w: ScalarField,
    cube: Cube,
    s: float = 1.0,
) -> float:
    """
    |Q|^(1/d) * avg_Q(h^s)^(1/2s) * avg_Q(w^-s)^(1/2s): the scale-invariant
    cube ratio of reaction to diffusion strength.  ``w`` is the trace
    coefficient for the unconditional bound, or the least eigenvalue field
    for the coercivity sufficient condition.
    """
    if s < 1:
        raise ValueError(f"s must be >= 1, got {s}")
    grid = h.grid
    block_h = h.values[cube.slices()]
    block_w = w.values[cube.slices()]
    if block_h.size == 0:
        raise EmptyRegionError("cube lies outside the grid")
    if np.any(block_w <= 0):
        raise WeightPositivityError("weight vanishes on the cube")
    side = cube.side(grid)
    return float(
        side
        * np.mean(block_h**s) ** (1.0 / (2 * s))
        * np.mean(block_w ** (-s)) ** (1.0 / (2 * s))
    )


def morrey_ratio_family(h: ScalarField, w: ScalarField, cubes: CubeSet, s: float = 1.0) -> np.ndarray:
    """Vectorized :func:`morrey_ratio` over a cube family."""
    if s < 1:
        raise ValueError(f"s must be >= 1, got {s}")
    _check_positive_weight(w)
    avg_hs = cube_family_averages(h.values**s, cubes)
    avg_ws = cube_family_averages(w.values ** (-s), cubes)
    sides = np.array([c.side(cubes.grid) for c in cubes.cubes])
    return sides * avg_hs ** (1.0 / (2 * s)) * avg_ws ** (1.0 / (2 * s))


def sigma_q2s(cube: Cube, grid: VelocityGrid, w1: ScalarField, w2: ScalarField, q: float, s: float) -> float:
    """Two-weight Sobolev cube functional |Q|^(1/d - 1/2 + 1/q) avg(w1^s)^(1/qs) avg(w2^-s)^(1/2s)."""
    if q < 2:
        raise ValueError(f"q must be >= 2, got {q}")
    if s <= 1:
        raise ValueError(f"s must exceed 1, got {s}")
    b1 = w1.values[cube.slices()]
    b2 = w2.values[cube.slices()]
    if b1.size == 0:
        raise EmptyRegionError("cube lies outside the grid")
    if np.any(b2 <= 0):
        raise WeightPositivityError("second weight vanishes on the cube")
    d = grid.dim
    side = cube.side(grid)
    vol = side**d
    return float(
        vol ** (1.0 / d - 0.5 + 1.0 / q)
        * np.mean(b1**s) ** (1.0 / (q * s))
        * np.mean(b2 ** (-s)) ** (1.0 / (2 * s))
    )


def enlarged_subcubes(cube: Cube, grid: VelocityGrid, factor: int = 8, max_levels: int = 2) -> tuple[list[Cube], bool]:
    """
    Dyadic subcubes of the factor-enlarged cube clipped to the grid box;
    returns (cubes, clipped flag).
    """
    n = grid.points_per_axis
    m = cube.n_cells
    half_extra = (factor - 1) * m // 2
    lo = [a - half_extra for a in cube.anchor]
    hi = [a + m + half_extra for a in cube.anchor]
    clipped = any(l < 0 for l in lo) or any(h > n for h in hi)
    lo = [max(0, l) for l in lo]
    hi = [min(n, h) for h in hi]
    out: list[Cube] = []
    for level in range(max_levels + 1):
        size = max(m // 2**level, 1)
        for anchor in itertools.product(
            *[range(l, h - size + 1, size) for l, h in zip(lo, hi)]
        ):
            out.append(Cube(tuple(anchor), size, level))
        if size == 1:
            break
    return out, clipped


def curly_c(
    cube: Cube,
    grid: VelocityGrid,
    w1: ScalarField,
    w2: ScalarField,
    q: float,
    s: float,
    subcubes: list[Cube] | None = None,
    constant: float = 1.0,
) -> dict:
    """
    Sobolev-constant functional: ``constant`` times the sup of sigma over the
    subcubes of the 8-fold enlargement (clipped to the grid, with a flag).
    """
    if subcubes is None:
        subcubes, clipped = enlarged_subcubes(cube, grid)
    else:
        clipped = False
    best, best_cube = -np.inf, None
    for k, sub in enumerate(subcubes):
        val = sigma_q2s(sub, grid, w1, w2, q, s)
        if val > best:
            best, best_cube = val, k
    return {
        "value": constant * best,
        "sup_sigma": best,
        "constant": constant,
        "argmax_subcube": best_cube,
        "clipped": clipped,
        "n_subcubes": len(subcubes),
    }


def e_ell(w1: ScalarField, ell: float, q: float) -> ScalarField:
    """
    Piecewise-constant tile field: on each tile Q of the side-ell partition,
    |Q|^(-1) (int_Q w1)^(2/q).
    """
    if q < 2:
        raise ValueError(f"q must be >= 2, got {q}")
    grid = w1.grid
    m = ell / grid.spacing
    mi = int(round(m))
    if abs(m - mi) > 1e-9 or mi < 1 or grid.points_per_axis % mi != 0:
        raise MisalignedCubeError(f"tile side {ell} does not align with the lattice")
    nt = grid.points_per_axis // mi
    d = grid.dim
    shape = tuple(x for _ in range(d) for x in (nt, mi))
    tiles = w1.values.reshape(shape)
    axes = tuple(2 * ax + 1 for ax in range(d))
    sums = tiles.sum(axis=axes) * grid.spacing**d
    vol = ell**d
    tile_vals = sums ** (2.0 / q) / vol
    out = tile_vals
    for ax in range(d):
        out = np.repeat(out, mi, axis=ax)
    return ScalarField(grid, out)


def random_cube_test_function(
    grid: VelocityGrid, cube: Cube, rng: np.random.Generator, n_modes: int = 3
) -> np.ndarray:
    """Random superposition of tensor sine modes vanishing on the cube boundary."""
    vals = np.zeros(grid.shape)
    block = [np.arange(cube.n_cells) + 0.5 for _ in range(grid.dim)]
    local = np.zeros((cube.n_cells,) * grid.dim)
    for _ in range(n_modes):
        ks = rng.integers(1, 4, size=grid.dim)
        amp = rng.normal()
        term = amp
        for ax in range(grid.dim):
            shape = [1] * grid.dim
            shape[ax] = cube.n_cells
            term = term * np.sin(np.pi * ks[ax] * block[ax] / cube.n_cells).reshape(shape)
        local = local + term
    vals[cube.slices()] = local
    return vals


def sobolev_empirical_constant(
    grid: VelocityGrid,
    cube: Cube,
    w1: ScalarField,
    w2: ScalarField,
    q: float,
    n_trials: int,
    rng: np.random.Generator,
) -> dict:
    """
    Largest ratio ||phi||_{L^q(w1)} / ||grad phi||_{L^2(w2)} over random
    compactly supported test functions on the cube.
    """
    from .operators import centered_gradient

    h = grid.spacing
    best = 0.0
    for _ in range(n_trials):
        phi = random_cube_test_function(grid, cube, rng)
        lhs = (np.sum(np.abs(phi) ** q * w1.values) * h**grid.dim) ** (1.0 / q)
        g = centered_gradient(phi, h)
        rhs2 = sum(np.sum(gi**2 * w2.values) for gi in g) * h**grid.dim
        if rhs2 <= 0:
            continue
        best = max(best, float(lhs / np.sqrt(rhs2)))
    return {"empirical_constant": best, "trials": n_trials}
