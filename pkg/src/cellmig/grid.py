"""Discretizations of the phase space: periodic x-box, velocity annulus,
activity triangle and fiber-direction sphere."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError


def sphere_measure(n: int) -> float:
    """|S^{n-1}|: 2 for n=1, 2*pi for n=2."""
    if n == 1:
        return 2.0
    if n == 2:
        return 2.0 * math.pi
    raise ConfigError(f"dimension n={n} not supported (use 1 or 2)")


def annulus_measure(n: int, s: float) -> float:
    return sphere_measure(n) * (1.0 - s**n) / n


def annulus_second_moment(n: int, s: float) -> float:
    """Exact value of int_V v_i v_i dv (no sum) on V = [s,1] x S^{n-1}."""
    return sphere_measure(n) * (1.0 - s ** (n + 2)) / (n * (n + 2))


def sound_speed_squared(n: int, s: float) -> float:
    """c^2 = int v_1^2 dv / |V| = (1-s^{n+2}) / ((n+2)(1-s^n)).

    The equilibrium pressure is c^2 rho I - rho U x U and c is the acoustic
    speed of the limiting hydrodynamic system.
    """
    return (1.0 - s ** (n + 2)) / ((n + 2) * (1.0 - s**n))


@dataclass(frozen=True)
class VelocityQuadrature:
    n: int
    s: float
    nodes: np.ndarray  # (nv, n); second half is the exact negation of the first
    weights: np.ndarray  # (nv,)
    radial_count: int
    angular_count: int

    @property
    def size(self) -> int:
        return len(self.weights)

    @property
    def measure(self) -> float:
        return float(self.weights.sum())

    @property
    def exact_measure(self) -> float:
        return annulus_measure(self.n, self.s)

    @property
    def speeds(self) -> np.ndarray:
        return np.linalg.norm(self.nodes, axis=1)

    @property
    def directions(self) -> np.ndarray:
        return self.nodes / self.speeds[:, None]

    @property
    def second_moment(self) -> np.ndarray:
        """Discrete int_V v (x) v dv as an (n, n) matrix."""
        return np.einsum("v,vi,vk->ik", self.weights, self.nodes, self.nodes)

    @property
    def tolerance(self) -> float:
        """Declared relative accuracy of the radial midpoint rule for r^{n+1}."""
        dr = (1.0 - self.s) / self.radial_count
        n = self.n
        # leading midpoint error of int_s^1 r^{n+1} dr, relative, with 1% slack
        err = dr**2 / 24.0 * (n + 1) * (1.0 - self.s**n)
        return 1.01 * err * (n + 2) / (1.0 - self.s ** (n + 2))


def build_velocity_quadrature(n: int, s: float, radial_count: int, angular_count: int = 2) -> VelocityQuadrature:
    """Midpoint rule in speed times uniform angles, symmetric under v -> -v.

    For n=1 the two directions of S^0 are used and ``angular_count`` must be 2.
    """
    if n not in (1, 2):
        raise ConfigError(f"velocity dimension must be 1 or 2, got {n}")
    if not 0.0 <= s < 1.0:
        raise ConfigError(f"speed ratio s must lie in [0, 1), got {s}")
    if radial_count < 2 or angular_count < 2:
        raise ConfigError("radial_count and angular_count must be >= 2")
    if angular_count % 2:
        raise ConfigError("angular_count must be even")
    if n == 1 and angular_count != 2:
        raise ConfigError("n=1 has exactly two directions; angular_count must be 2")

    dr = (1.0 - s) / radial_count
    radii = s + (np.arange(radial_count) + 0.5) * dr
    if n == 1:
        half_nodes = radii[:, None]
        half_w = np.full(radial_count, dr)
    else:
        dphi = 2.0 * math.pi / angular_count
        # angles in [0, pi); their antipodes form the second half
        phi = (np.arange(angular_count // 2) + 0.5) * dphi
        rr, pp = np.meshgrid(radii, phi, indexing="ij")
        half_nodes = np.stack([rr * np.cos(pp), rr * np.sin(pp)], axis=-1).reshape(-1, 2)
        half_w = (rr * dr * dphi).reshape(-1)
    nodes = np.concatenate([half_nodes, -half_nodes])
    weights = np.concatenate([half_w, half_w])
    return VelocityQuadrature(n, float(s), nodes, weights, radial_count, angular_count)


def quadrature_moment(quad: VelocityQuadrature, powers) -> float:
    """Discrete int_V v^powers dv.

    The two antipodal halves are summed separately, so odd moments cancel
    to exactly zero.
    """
    powers = tuple(int(p) for p in np.atleast_1d(powers))
    if len(powers) != quad.n:
        raise ConfigError(f"need {quad.n} exponents, got {len(powers)}")
    if any(p < 0 for p in powers):
        raise ConfigError("exponents must be nonnegative")
    h = quad.size // 2
    mono = np.prod(quad.nodes ** np.array(powers), axis=1)
    vals = quad.weights * mono
    return float(vals[:h].sum() + vals[h:].sum())


@dataclass(frozen=True)
class ActivityGrid:
    """Uniform triangulation of Y = {y1, y2 > 0, y1 + y2 < 1} into m^2 cells,
    with unknowns on the (m+1)(m+2)/2 lattice points y = h (i, j).

    ``weights`` is the lumped (vertex-rule) quadrature: each cell gives a
    third of its area to each of its vertices, which integrates affine
    functions exactly. ``transfer[d]`` (d in +e1, -e1, +e2, -e2) holds the
    upwind rates r[c, k] = 1/h to the next lattice point in direction d, so
    sum_k r[c, k] (y_k - y_c) = d exactly. The move is missing only on the
    edge of Y that d points out of, where the matching reaction rate
    (free receptors for +e1/+e2, y1 for -e1, y2 for -e2) vanishes.
    """

    subdivision: int
    nodes: np.ndarray  # (ny, 2) lattice points
    weights: np.ndarray  # (ny,)
    cells: np.ndarray  # (m^2, 3) vertex indices
    cell_areas: np.ndarray  # (m^2,)
    boundary_normals: np.ndarray  # (nb, 3): node, outward normal (n1, n2)
    transfer: dict = field(repr=False)

    @property
    def size(self) -> int:
        return len(self.weights)

    @property
    def cell_count(self) -> int:
        return len(self.cell_areas)

    @property
    def spacing(self) -> float:
        return 1.0 / self.subdivision

    @property
    def boundary_points(self) -> np.ndarray:
        return self.nodes[self.boundary_normals[:, 0].astype(int)]


def build_activity_grid(subdivision: int) -> ActivityGrid:
    m = int(subdivision)
    if m < 1:
        raise ConfigError(f"activity subdivision must be >= 1, got {subdivision}")
    h = 1.0 / m
    index = {}
    for j in range(m + 1):
        for i in range(m + 1 - j):
            index[(i, j)] = len(index)
    nodes = np.array(list(index), dtype=float) * h

    cells = []
    for j in range(m):
        for i in range(m - j):
            cells.append((index[(i, j)], index[(i + 1, j)], index[(i, j + 1)]))
    for j in range(m - 1):
        for i in range(m - 1 - j):
            cells.append((index[(i + 1, j)], index[(i + 1, j + 1)], index[(i, j + 1)]))
    cells = np.array(cells)
    cell_areas = np.full(len(cells), 0.5 * h * h)
    weights = np.zeros(len(nodes))
    np.add.at(weights, cells.ravel(), np.repeat(cell_areas / 3.0, 3))

    s2 = 1.0 / math.sqrt(2.0)
    bnd = []
    for (i, j), c in index.items():
        if i == 0:
            bnd.append((c, -1.0, 0.0))
        if j == 0:
            bnd.append((c, 0.0, -1.0))
        if i + j == m:
            bnd.append((c, s2, s2))

    transfer = {}
    for name, (di, dj) in (("+e1", (1, 0)), ("-e1", (-1, 0)), ("+e2", (0, 1)), ("-e2", (0, -1))):
        rates = np.zeros((len(nodes), len(nodes)))
        for (i, j), c in index.items():
            k = index.get((i + di, j + dj))
            if k is not None:
                rates[c, k] = 1.0 / h
        transfer[name] = rates

    return ActivityGrid(m, nodes, weights, cells, cell_areas, np.array(bnd, dtype=float).reshape(-1, 3), transfer)


@dataclass(frozen=True)
class ThetaGrid:
    nodes: np.ndarray  # (nt, n)
    weights: np.ndarray  # (nt,)

    @property
    def size(self) -> int:
        return len(self.weights)

    @property
    def measure(self) -> float:
        return float(self.weights.sum())


def build_theta_grid(n: int, count: int = 2) -> ThetaGrid:
    if n == 1:
        return ThetaGrid(np.array([[-1.0], [1.0]]), np.array([1.0, 1.0]))
    if n != 2:
        raise ConfigError(f"fiber directions only for n in (1, 2), got {n}")
    if count < 2 or count % 2:
        raise ConfigError("theta count must be even and >= 2")
    phi = (np.arange(count) + 0.5) * 2.0 * math.pi / count
    return ThetaGrid(np.stack([np.cos(phi), np.sin(phi)], axis=1), np.full(count, 2.0 * math.pi / count))


@dataclass(frozen=True)
class SpaceGrid:
    n: int
    lengths: tuple
    cells: tuple
    periodic: bool = True

    def __post_init__(self):
        if len(self.lengths) != self.n or len(self.cells) != self.n:
            raise ConfigError("space grid needs one length and one cell count per axis")
        if any(c < 3 for c in self.cells) or any(length <= 0 for length in self.lengths):
            raise ConfigError("space grid needs >= 3 cells and positive lengths per axis")
        if not np.allclose(self.dx_axes, self.dx_axes[0], rtol=1e-12, atol=0.0):
            raise ConfigError("cells must be uniform: equal spacing on every axis")

    @property
    def dx_axes(self) -> tuple:
        return tuple(length / c for length, c in zip(self.lengths, self.cells))

    @property
    def dx(self) -> float:
        return self.dx_axes[0]

    @property
    def shape(self) -> tuple:
        return tuple(self.cells)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.dx_axes))

    def centers(self) -> list:
        return [(np.arange(c) + 0.5) * dx for c, dx in zip(self.cells, self.dx_axes)]

    def mesh(self) -> np.ndarray:
        """Cell centres, shape (*cells, n)."""
        return np.stack(np.meshgrid(*self.centers(), indexing="ij"), axis=-1)


@dataclass(frozen=True)
class PhaseGrid:
    space: SpaceGrid
    velocity: VelocityQuadrature
    activity: ActivityGrid
    theta: ThetaGrid

    @property
    def n(self) -> int:
        return self.space.n

    @property
    def f_shape(self) -> tuple:
        return self.space.shape + (self.velocity.size, self.activity.size)

    @property
    def q_shape(self) -> tuple:
        return self.space.shape + (self.theta.size,)

    def integrate_vy(self, f: np.ndarray) -> np.ndarray:
        """int_V int_Y f dv dy at every x."""
        return np.einsum("...vy,v,y->...", f, self.velocity.weights, self.activity.weights)

    def integrate_x(self, a: np.ndarray) -> float:
        return float(a.sum() * self.space.cell_volume)


def build_phase_grid(
    n: int = 1,
    s: float = 0.5,
    x_cells: int = 64,
    box: float = 1.0,
    radial_count: int = 8,
    angular_count: int = 2,
    activity_subdivision: int = 7,
    theta_count: int = 2,
) -> PhaseGrid:
    space = SpaceGrid(n, (float(box),) * n, (int(x_cells),) * n)
    return PhaseGrid(
        space=space,
        velocity=build_velocity_quadrature(n, s, radial_count, angular_count),
        activity=build_activity_grid(activity_subdivision),
        theta=build_theta_grid(n, theta_count),
    )
