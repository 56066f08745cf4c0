"""Discrete immersions of grid cubes, their curvature fields and energies.

Maps are stored as node values over a regular grid on the cube (0, l)^d and
differentiated per cell.  Targets are either the full Euclidean space R^(d+1)
or the round sphere of dimension d+1 sitting in R^(d+2); in both cases the
immersed cube has codimension one inside the target manifold, so each
non-degenerate cell carries a single unit normal inside the tangent space of
the target.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .metric_algebra import isometry_defect, spd_inv_sqrt

_RANK_TOL = 1e-12
_ON_MANIFOLD_TOL = 1e-8
_SYMMETRY_TOL = 1e-12
_EIGENVALUE_FLOOR = 1e-14

DIFF_MODES = ("forward", "central")


class DegenerateFieldError(RuntimeError):
    """Raised when a fitting pipeline finds no usable (full-rank) cells."""


@dataclass(frozen=True)
class GridDomain:
    """Regular grid on the open cube (0, length)^dim with `resolution` cells per axis.

    Nodes sit at integer multiples of the spacing; cells are indexed by their
    lower corner.  Single-cell grids (resolution 1) only arise as leaves of
    the multiscale splitter; scenario builders and snapshots require at least
    two cells per axis.
    """

    dim: int
    length: float
    resolution: int

    def __post_init__(self) -> None:
        if self.dim < 1:
            raise ValueError("grid dimension must be at least 1")
        if not self.length > 0.0:
            raise ValueError("grid side length must be positive")
        if self.resolution < 1:
            raise ValueError("grid resolution must be at least 1")

    @property
    def spacing(self) -> float:
        return self.length / self.resolution

    @property
    def node_shape(self) -> tuple[int, ...]:
        return (self.resolution + 1,) * self.dim

    @property
    def cell_shape(self) -> tuple[int, ...]:
        return (self.resolution,) * self.dim

    @property
    def cell_count(self) -> int:
        return self.resolution**self.dim

    @property
    def cell_volume(self) -> float:
        return self.spacing**self.dim

    @property
    def volume(self) -> float:
        return self.length**self.dim

    @property
    def diameter(self) -> float:
        return self.length * np.sqrt(self.dim)

    def node_axis(self) -> np.ndarray:
        return np.arange(self.resolution + 1) * self.spacing

    def node_coordinates(self) -> np.ndarray:
        """Array of shape (*node_shape, dim) with the node positions."""
        axes = np.meshgrid(*([self.node_axis()] * self.dim), indexing="ij")
        return np.stack(axes, axis=-1)

    def cell_centers(self) -> np.ndarray:
        axis = (np.arange(self.resolution) + 0.5) * self.spacing
        axes = np.meshgrid(*([axis] * self.dim), indexing="ij")
        return np.stack(axes, axis=-1)


def grid_differential(grid: GridDomain, values: np.ndarray, mode: str = "forward") -> np.ndarray:
    """Per-cell differential of node values, shape (*cell_shape, D, dim).

    "forward" divides the forward difference along each axis by the spacing
    and reads the remaining axes at the cell's lower corner (first order at
    the cell center).  "central" instead averages that difference over the
    2^(dim-1) corner pairs of the cell, which is second order at the center.
    Both are exact on affine data.
    """
    if mode not in DIFF_MODES:
        raise ValueError(f"unknown difference mode {mode!r}")
    values = np.asarray(values, dtype=float)
    n = grid.resolution
    cols = []
    for axis in range(grid.dim):
        upper = np.take(values, range(1, n + 1), axis=axis)
        lower = np.take(values, range(0, n), axis=axis)
        diff = (upper - lower) / grid.spacing
        for other in range(grid.dim):
            if other == axis:
                continue
            if mode == "forward":
                diff = np.take(diff, range(0, n), axis=other)
            else:
                diff = 0.5 * (
                    np.take(diff, range(1, n + 1), axis=other)
                    + np.take(diff, range(0, n), axis=other)
                )
        cols.append(diff)
    return np.stack(cols, axis=-1)


def corner_average(values: np.ndarray, dim: int) -> np.ndarray:
    """Average node data over the 2^dim corners of every cell."""
    out = np.asarray(values, dtype=float)
    for axis in range(dim):
        n = out.shape[axis] - 1
        out = 0.5 * (np.take(out, range(1, n + 1), axis=axis) + np.take(out, range(0, n), axis=axis))
    return out


def _max_pairwise_distance(points: np.ndarray) -> float:
    """Exact maximum pairwise Euclidean distance, chunked to bound memory."""
    pts = points.reshape(points.shape[0], -1)
    n = pts.shape[0]
    if n <= 1 or (np.ptp(pts, axis=0) == 0.0).all():
        return 0.0
    sq = np.einsum("ij,ij->i", pts, pts)
    chunk = max(1, (1 << 22) // n)
    best = 0.0
    for start in range(0, n, chunk):
        block = pts[start : start + chunk]
        d2 = sq[start : start + chunk, None] + sq[None, :] - 2.0 * (block @ pts.T)
        best = max(best, float(d2.max()))
    return float(np.sqrt(max(best, 0.0)))


class MetricField:
    """Node-sampled SPD metric on a grid, with sandwich and Lipschitz data.

    `lam` is the smallest constant with I/lam <= gram <= lam*I at every node;
    `lipschitz` is the discrete Lipschitz quotient measured over axis-adjacent
    node pairs.  Either can be passed in as a certified bound, in which case
    it must not undercut the measured value.
    """

    def __init__(
        self,
        grid: GridDomain,
        gram: np.ndarray,
        lam: float | None = None,
        lipschitz: float | None = None,
    ):
        gram = np.asarray(gram, dtype=float)
        expected = grid.node_shape + (grid.dim, grid.dim)
        if gram.shape != expected:
            raise ValueError(f"gram field shape {gram.shape}, expected {expected}")
        sym_defect = np.abs(gram - np.swapaxes(gram, -1, -2)).max()
        if sym_defect > _SYMMETRY_TOL:
            raise ValueError("gram field is not symmetric at every node")
        eigs = np.linalg.eigvalsh(gram)
        if eigs.min() < _EIGENVALUE_FLOOR:
            raise ValueError("gram field is not positive definite at every node")
        self.grid = grid
        self.gram = gram
        measured_lam = float(max(eigs.max(), 1.0 / eigs.min(), 1.0))
        if lam is None:
            self.lam = measured_lam
        else:
            if lam < measured_lam * (1.0 - 1e-12):
                raise ValueError(
                    f"declared sandwich constant {lam} is below the measured {measured_lam}"
                )
            self.lam = float(lam)
        measured_lip = self._discrete_lipschitz()
        if lipschitz is None:
            self.lipschitz = measured_lip
        else:
            if measured_lip > lipschitz * (1.0 + 1e-6) + 1e-15:
                raise ValueError(
                    f"measured Lipschitz quotient {measured_lip} exceeds declared {lipschitz}"
                )
            self.lipschitz = float(lipschitz)

    def _discrete_lipschitz(self) -> float:
        worst = 0.0
        for axis in range(self.grid.dim):
            step = np.diff(self.gram, axis=axis)
            if step.size:
                jumps = np.sqrt(np.sum(step**2, axis=(-2, -1)))
                worst = max(worst, float(jumps.max()) / self.grid.spacing)
        return worst

    @classmethod
    def constant(cls, grid: GridDomain, gram: np.ndarray) -> "MetricField":
        gram = np.asarray(gram, dtype=float)
        field = np.broadcast_to(gram, grid.node_shape + gram.shape).copy()
        return cls(grid, field)

    @classmethod
    def from_callable(cls, grid: GridDomain, fn, **kwargs) -> "MetricField":
        coords = grid.node_coordinates().reshape(-1, grid.dim)
        grams = np.stack([fn(x) for x in coords])
        return cls(grid, grams.reshape(grid.node_shape + (grid.dim, grid.dim)), **kwargs)

    @cached_property
    def cell_grams(self) -> np.ndarray:
        """Cell-centered metric: arithmetic average of the corner Gram matrices."""
        return corner_average(self.gram, self.grid.dim)

    @cached_property
    def cell_inv_sqrt(self) -> np.ndarray:
        return spd_inv_sqrt(self.cell_grams)

    @cached_property
    def cell_sqrt_det(self) -> np.ndarray:
        return np.sqrt(np.linalg.det(self.cell_grams))

    def gram_at_node(self, index: tuple[int, ...]) -> np.ndarray:
        return self.gram[index]

    def restrict(self, corner: tuple[int, ...], resolution: int) -> "MetricField":
        """Sub-field on the subcube of `resolution` cells at node `corner`."""
        slices = tuple(slice(c, c + resolution + 1) for c in corner)
        sub = GridDomain(self.grid.dim, self.grid.spacing * resolution, resolution)
        return MetricField(sub, self.gram[slices], lam=self.lam)


def oscillation_and_diameter(
    g: MetricField, cell_box: tuple[tuple[int, int], ...]
) -> tuple[float, float]:
    """Metric oscillation over a cell box and the box's Euclidean diameter.

    `cell_box` is one (lo, hi) half-open cell range per axis; the oscillation
    is the exact maximum Frobenius distance between Gram matrices over the
    nodes the box touches (lo..hi inclusive per axis).
    """
    grid = g.grid
    if len(cell_box) != grid.dim:
        raise ValueError("cell box must give one range per axis")
    widths = []
    slices = []
    for lo, hi in cell_box:
        if not 0 <= lo < hi <= grid.resolution:
            raise ValueError(f"cell range ({lo}, {hi}) outside grid of {grid.resolution} cells")
        widths.append((hi - lo) * grid.spacing)
        slices.append(slice(lo, hi + 1))
    grams = g.gram[tuple(slices)].reshape(-1, grid.dim * grid.dim)
    return _max_pairwise_distance(grams), float(np.linalg.norm(widths))


@dataclass(frozen=True)
class TargetSpace:
    """Codimension-one target: all of R^(d+1), or the round sphere in R^(d+2)."""

    kind: str
    base_dim: int
    radius: float | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("euclidean", "sphere"):
            raise ValueError(f"unknown target kind {self.kind!r}")
        if self.base_dim < 1:
            raise ValueError("base dimension must be at least 1")
        if self.kind == "sphere":
            if self.radius is None or not self.radius > 0.0:
                raise ValueError("sphere target needs a positive radius")
        elif self.radius is not None:
            raise ValueError("euclidean target takes no radius")

    @property
    def ambient_dim(self) -> int:
        return self.base_dim + (1 if self.kind == "euclidean" else 2)

    @classmethod
    def euclidean(cls, base_dim: int) -> "TargetSpace":
        return cls("euclidean", base_dim)

    @classmethod
    def sphere(cls, base_dim: int, radius: float) -> "TargetSpace":
        return cls("sphere", base_dim, radius)


def tangent_projection(target: TargetSpace, q: np.ndarray) -> np.ndarray:
    """Orthogonal projection onto the target's tangent space at the point q."""
    q = np.asarray(q, dtype=float)
    if q.shape != (target.ambient_dim,):
        raise ValueError(f"point shape {q.shape} does not match ambient R^{target.ambient_dim}")
    if target.kind == "euclidean":
        return np.eye(target.ambient_dim)
    off = abs(np.linalg.norm(q) - target.radius)
    if off > _ON_MANIFOLD_TOL * max(1.0, target.radius):
        raise ValueError(f"point is off the sphere by {off:.3e}")
    unit = q / np.linalg.norm(q)
    return np.eye(target.ambient_dim) - np.outer(unit, unit)


@dataclass(frozen=True)
class GridMap:
    """Plain node-sampled map from the grid cube into R^D (no target structure)."""

    grid: GridDomain
    values: np.ndarray
    mode: str = "forward"

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=float)
        if values.ndim != self.grid.dim + 1 or values.shape[:-1] != self.grid.node_shape:
            raise ValueError(
                f"value field shape {values.shape} does not match grid nodes {self.grid.node_shape}"
            )
        object.__setattr__(self, "values", values)

    @property
    def ambient_dim(self) -> int:
        return self.values.shape[-1]

    @cached_property
    def differential(self) -> np.ndarray:
        return grid_differential(self.grid, self.values, self.mode)

    def restrict(self, corner: tuple[int, ...], resolution: int) -> "GridMap":
        slices = tuple(slice(c, c + resolution + 1) for c in corner)
        sub = GridDomain(self.grid.dim, self.grid.spacing * resolution, resolution)
        return GridMap(sub, self.values[slices], self.mode)


class ImmersionField:
    """Discrete immersion of the grid cube into a codimension-one target.

    All derived cell data is computed once at construction: the differential,
    the oriented unit normal, its difference field, and the shape operator
    solving  differential @ S = P (normal differential)  in least squares.
    Cells where the differential drops rank get a zero normal and are flagged
    degenerate; energies skip them and report the count.
    """

    def __init__(
        self,
        grid: GridDomain,
        target: TargetSpace,
        values: np.ndarray,
        mode: str = "forward",
    ):
        values = np.asarray(values, dtype=float)
        if target.base_dim != grid.dim:
            raise ValueError("target base dimension does not match the grid")
        expected = grid.node_shape + (target.ambient_dim,)
        if values.shape != expected:
            raise ValueError(f"value field shape {values.shape}, expected {expected}")
        if target.kind == "sphere":
            off = np.abs(np.linalg.norm(values, axis=-1) - target.radius).max()
            if off > _ON_MANIFOLD_TOL * max(1.0, target.radius):
                raise ValueError(f"node values leave the sphere by up to {off:.3e}")
        self.grid = grid
        self.target = target
        self.values = values
        self.mode = mode
        self.differential = grid_differential(grid, values, mode)
        self.cell_points = corner_average(values, grid.dim)
        self._build_normal_data()

    def _build_normal_data(self) -> None:
        du = self.differential
        d = self.grid.dim
        big = self.target.ambient_dim
        h = self.grid.spacing

        sing = np.linalg.svd(du, compute_uv=False)
        scale = np.maximum(sing[..., 0], 1.0)
        degenerate = sing[..., -1] <= _RANK_TOL * scale

        if self.target.kind == "euclidean":
            window = du
        else:
            radial = self.cell_points / np.linalg.norm(self.cell_points, axis=-1, keepdims=True)
            self._cell_radial = radial
            window = np.concatenate([du, radial[..., :, None]], axis=-1)
            win_sing = np.linalg.svd(window, compute_uv=False)
            degenerate = degenerate | (win_sing[..., -1] <= _RANK_TOL * np.maximum(win_sing[..., 0], 1.0))

        left = np.linalg.svd(window, full_matrices=True)[0]
        normal = left[..., :, big - 1].copy()

        # Sign convention: the normal completes the differential's columns to a
        # positively oriented frame of the target's tangent space.  On spheres
        # the tangent orientation itself is taken outward-radial-first.
        if self.target.kind == "euclidean":
            stacked = np.concatenate([du, normal[..., :, None]], axis=-1)
        else:
            stacked = np.concatenate(
                [radial[..., :, None], du, normal[..., :, None]], axis=-1
            )
        flip = np.linalg.det(stacked) < 0
        normal[flip] = -normal[flip]
        normal[degenerate] = 0.0

        self.degenerate = degenerate
        self.normal = normal
        self.normal_differential = self._cell_gradient(normal, h)

        if self.target.kind == "euclidean":
            projected = self.normal_differential
        else:
            coeff = np.einsum("...i,...ij->...j", radial, self.normal_differential)
            projected = self.normal_differential - radial[..., :, None] * coeff[..., None, :]
        self.projected_normal_differential = projected

        gram = np.swapaxes(du, -1, -2) @ du
        rhs = np.swapaxes(du, -1, -2) @ projected
        safe = np.where(degenerate[..., None, None], np.eye(d), gram)
        shape = np.linalg.solve(safe, rhs)
        shape[degenerate] = 0.0
        self.shape_operator = shape
        self.shape_residual = np.linalg.norm(du @ shape - projected, axis=(-2, -1))
        self.shape_residual[degenerate] = 0.0

    @staticmethod
    def _cell_gradient(field: np.ndarray, h: float) -> np.ndarray:
        """Forward differences of a cell field, repeating the last difference
        at the trailing cell of each axis; single-cell axes contribute zero."""
        d = field.ndim - 1
        cols = []
        for axis in range(d):
            if field.shape[axis] == 1:
                cols.append(np.zeros_like(field))
                continue
            diff = np.diff(field, axis=axis) / h
            last = np.take(diff, [-1], axis=axis)
            cols.append(np.concatenate([diff, last], axis=axis))
        return np.stack(cols, axis=-1)

    @property
    def degenerate_count(self) -> int:
        return int(self.degenerate.sum())

    def cell_tangent_projection(self, index: tuple[int, ...]) -> np.ndarray:
        """Tangent projection at one cell's (renormalized) center point."""
        if self.target.kind == "euclidean":
            return np.eye(self.target.ambient_dim)
        unit = self._cell_radial[index]
        return np.eye(self.target.ambient_dim) - np.outer(unit, unit)

    def restrict(self, corner: tuple[int, ...], resolution: int) -> "ImmersionField":
        """Sub-immersion on the subcube of `resolution` cells at node `corner`."""
        slices = tuple(slice(c, c + resolution + 1) for c in corner)
        sub = GridDomain(self.grid.dim, self.grid.spacing * resolution, resolution)
        return ImmersionField(sub, self.target, self.values[slices], self.mode)


@dataclass(frozen=True)
class ReferenceShape:
    """Node-sampled symmetric form prescribing a target second fundamental form."""

    grid: GridDomain
    form: np.ndarray

    def __post_init__(self) -> None:
        form = np.asarray(self.form, dtype=float)
        expected = self.grid.node_shape + (self.grid.dim, self.grid.dim)
        if form.shape != expected:
            raise ValueError(f"form field shape {form.shape}, expected {expected}")
        if np.abs(form - np.swapaxes(form, -1, -2)).max() > _SYMMETRY_TOL:
            raise ValueError("reference form must be symmetric at every node")
        object.__setattr__(self, "form", form)

    def restrict(self, corner: tuple[int, ...], resolution: int) -> "ReferenceShape":
        slices = tuple(slice(c, c + resolution + 1) for c in corner)
        sub = GridDomain(self.grid.dim, self.grid.spacing * resolution, resolution)
        return ReferenceShape(sub, self.form[slices])


def reference_shape(ref: ReferenceShape, g: MetricField) -> np.ndarray:
    """Per-node shape operator of the reference form: solves gram @ S = form."""
    if ref.grid != g.grid:
        raise ValueError("reference form and metric live on different grids")
    return np.linalg.solve(g.gram, ref.form)


@dataclass(frozen=True)
class EnergyReport:
    """Cell-midpoint quadrature of the immersion energies at exponent p.

    `excess` is bending + dirichlet by construction.  `measure` records
    whether cells were weighted with the metric volume sqrt(det gram) or with
    plain Lebesgue measure.
    """

    p: float
    stretch: float
    bending: float
    bending_ref: float | None
    dirichlet: float
    excess: float
    measure: str
    degenerate_cells: int


def energies(
    u: ImmersionField,
    g: MetricField,
    ref: ReferenceShape | None = None,
    p: float = 2.0,
    measure: str = "riemannian",
) -> EnergyReport:
    """Stretching, bending and Dirichlet content of a discrete immersion.

    Stretching integrates dist^p to the (not necessarily oriented) isometries
    of the cell metric; bending integrates the tangential part of the normal's
    variation; with a reference form the misfit |du (S_u - S_ref)|^p is also
    integrated.  Degenerate cells are skipped and counted.
    """
    if u.grid != g.grid:
        raise ValueError("immersion and metric live on different grids")
    if measure not in ("riemannian", "lebesgue"):
        raise ValueError(f"unknown measure {measure!r}")
    if not p >= 1.0:
        raise ValueError("exponent p must be at least 1")

    good = ~u.degenerate
    weights = np.full(u.grid.cell_shape, u.grid.cell_volume)
    if measure == "riemannian":
        weights = weights * g.cell_sqrt_det
    w = weights[good]

    inv_sqrt = g.cell_inv_sqrt[good]
    du = u.differential[good]

    stretch_density = isometry_defect(du @ inv_sqrt)
    stretch = float(np.sum(stretch_density**p * w))

    bend_density = np.linalg.norm(u.projected_normal_differential[good] @ inv_sqrt, axis=(-2, -1))
    bending = float(np.sum(bend_density**p * w))

    dirichlet_density = np.linalg.norm(du @ inv_sqrt, axis=(-2, -1))
    dirichlet = float(np.sum(dirichlet_density**p * w))

    bending_ref = None
    if ref is not None:
        if ref.grid != u.grid:
            raise ValueError("reference form lives on a different grid")
        cell_forms = corner_average(ref.form, u.grid.dim)
        ref_shape = np.linalg.solve(g.cell_grams, cell_forms)[good]
        misfit = du @ (u.shape_operator[good] - ref_shape)
        ref_density = np.linalg.norm(misfit @ inv_sqrt, axis=(-2, -1))
        bending_ref = float(np.sum(ref_density**p * w))

    return EnergyReport(
        p=float(p),
        stretch=stretch,
        bending=bending,
        bending_ref=bending_ref,
        dirichlet=dirichlet,
        excess=bending + dirichlet,
        measure=measure,
        degenerate_cells=u.degenerate_count,
    )


def snapshot_save(path, u: ImmersionField, g: MetricField) -> None:
    """Write an immersion and its metric as a single JSON document."""
    if u.grid != g.grid:
        raise ValueError("immersion and metric live on different grids")
    target: dict = {"kind": u.target.kind, "D": u.target.ambient_dim}
    if u.target.kind == "sphere":
        target["rho"] = u.target.radius
    doc = {
        "grid": {"d": u.grid.dim, "l": u.grid.length, "n": u.grid.resolution},
        "target": target,
        "values": u.values.reshape(-1, u.target.ambient_dim).tolist(),
        "gram": g.gram.reshape(-1, u.grid.dim, u.grid.dim).tolist(),
    }
    with open(path, "w") as handle:
        json.dump(doc, handle, sort_keys=True)
        handle.write("\n")


def snapshot_load(path) -> tuple[ImmersionField, MetricField]:
    """Read back a snapshot written by `snapshot_save`."""
    with open(path) as handle:
        doc = json.load(handle)
    try:
        gd = doc["grid"]
        grid = GridDomain(int(gd["d"]), float(gd["l"]), int(gd["n"]))
        td = doc["target"]
        if td["kind"] == "sphere":
            target = TargetSpace.sphere(grid.dim, float(td["rho"]))
        else:
            target = TargetSpace.euclidean(grid.dim)
        if int(td["D"]) != target.ambient_dim:
            raise ValueError(f"snapshot ambient dimension {td['D']} is inconsistent")
        values = np.array(doc["values"], dtype=float).reshape(
            grid.node_shape + (target.ambient_dim,)
        )
        gram = np.array(doc["gram"], dtype=float).reshape(grid.node_shape + (grid.dim, grid.dim))
    except KeyError as missing:
        raise ValueError(f"snapshot is missing field {missing}") from None
    if grid.resolution < 2:
        raise ValueError("snapshot grids need at least two cells per axis")
    return ImmersionField(grid, target, values), MetricField(grid, gram)
