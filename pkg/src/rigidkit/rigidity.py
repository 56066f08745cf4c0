"""Rotation-fitting pipelines for discrete maps and immersions.

Everything here is constructive: each estimate is produced by actually
fitting the competitor map (a rotation, a metric-compatible frame, or a
piecewise-constant rotation field) and integrating both sides, so the
reports carry measured empirical constants rather than existence claims.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .fields import (
    DegenerateFieldError,
    EnergyReport,
    GridDomain,
    GridMap,
    ImmersionField,
    MetricField,
    ReferenceShape,
    energies,
    oscillation_and_diameter,
)
from .metric_algebra import OrientedSubspace, isometry_defect, rotation_align, spd_sqrt

RHS_GUARD = 1e-14
CANDIDATE_CAP = 4096
_RANK_TOL = 1e-12
_DESCENT_REL_TOL = 1e-10


def _flat_norms(mats: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(mats * mats, axis=(-2, -1)))


def _guarded_ratio(lhs: float, rhs: float) -> float:
    if lhs < RHS_GUARD and rhs < RHS_GUARD:
        return 0.0
    return float(lhs / max(rhs, RHS_GUARD))


def _as_cell_index(grid: GridDomain, index) -> tuple[int, ...]:
    if np.isscalar(index):
        index = (index,)
    index = tuple(int(i) for i in index)
    if len(index) != grid.dim:
        raise ValueError(f"cell index {index} does not match grid dimension {grid.dim}")
    for i, n in zip(index, grid.cell_shape):
        if not 0 <= i < n:
            raise ValueError(f"cell index {index} outside grid of {grid.cell_shape} cells")
    return index


@dataclass(frozen=True, eq=False)
class EuclideanFit:
    """Best single rotation for a field of square cell differentials."""

    p: float
    rotation: np.ndarray
    lhs: float
    rhs: float
    constant: float


def _rotation_descent(du: np.ndarray, p: float, start: np.ndarray) -> np.ndarray:
    """Coordinate descent over planar rotation angles, seeded near the optimum.

    The objective sum |Du - R|^p is smooth in the angles, so halving the step
    until the relative improvement drops below 1e-10 is enough here; no
    gradient information is needed.
    """
    d = start.shape[0]
    pairs = list(itertools.combinations(range(d), 2))
    if not pairs:
        return start

    def objective(rot: np.ndarray) -> float:
        return float(np.sum(_flat_norms(du - rot) ** p))

    best_rot = start
    best = objective(start)
    step = np.pi / 8
    while step > 1e-12:
        moved = False
        for i, j in pairs:
            for sign in (1.0, -1.0):
                c, s = np.cos(sign * step), np.sin(sign * step)
                givens = np.eye(d)
                givens[i, i] = c
                givens[j, j] = c
                givens[i, j] = -s
                givens[j, i] = s
                candidate = givens @ best_rot
                value = objective(candidate)
                if value < best * (1.0 - _DESCENT_REL_TOL):
                    best_rot, best, moved = candidate, value, True
        if not moved:
            step *= 0.5
    return best_rot


def euclidean_best_rotation(
    du_cells: np.ndarray,
    cell_volume: float = 1.0,
    p: float = 2.0,
    mask: np.ndarray | None = None,
) -> EuclideanFit:
    """Fit one rotation to per-cell square differentials and integrate both sides.

    For p = 2 the cell average's oriented Procrustes factor is the exact
    minimizer of sum |Du - R|^2 over rotations; for other exponents that
    closed form seeds a descent over rotation angles.  `mask` selects the
    cells entering the integrals (callers exclude flagged degenerate cells).
    """
    du = np.asarray(du_cells, dtype=float)
    if du.ndim < 2 or du.shape[-1] != du.shape[-2]:
        raise ValueError("euclidean fitting needs square cell differentials")
    if not p > 1.0:
        raise ValueError("exponent p must exceed 1")
    d = du.shape[-1]
    du = du.reshape(-1, d, d)
    if mask is None:
        mask = np.ones(du.shape[0], dtype=bool)
    else:
        mask = np.asarray(mask, dtype=bool).reshape(-1)
        if mask.shape[0] != du.shape[0]:
            raise ValueError("mask length does not match the number of cells")
    used = du[mask]
    if used.size == 0:
        raise DegenerateFieldError("no cells available for rotation fitting")
    sing = np.linalg.svd(used, compute_uv=False)
    full_rank = sing[..., -1] > _RANK_TOL * np.maximum(sing[..., 0], 1.0)
    if not full_rank.any():
        raise DegenerateFieldError("every cell differential is rank deficient")

    rotation = rotation_align(used.mean(axis=0))
    if p != 2.0:
        rotation = _rotation_descent(used, p, rotation)

    lhs = float(cell_volume * np.sum(_flat_norms(used - rotation) ** p))
    rhs = float(cell_volume * np.sum(isometry_defect(used, oriented=True) ** p))
    return EuclideanFit(p, rotation, lhs, rhs, _guarded_ratio(lhs, rhs))


@dataclass(frozen=True, eq=False)
class RigidityReport:
    """One rigidity estimate: the fitted map and both sides of the inequality.

    `rotation` maps the flat cube into the target and satisfies
    rotation.T @ rotation = gram at the base cell.  The equidimensional
    pipeline leaves `bend_scale` and `plane_variation` at zero.
    """

    p: float
    base_index: tuple[int, ...]
    rotation: np.ndarray
    lhs: float
    osc_term: float
    stretch: float
    bend_scale: float
    plane_variation: float
    constant: float

    @property
    def rhs_total(self) -> float:
        return self.osc_term + self.stretch + self.bend_scale


def metric_rigidity(
    u: GridMap,
    g: MetricField,
    base_index=None,
    p: float = 2.0,
    mask: np.ndarray | None = None,
) -> RigidityReport:
    """Fit a metric-compatible frame R with R.T @ R = gram(base cell).

    The fit runs in flattened coordinates: with T the symmetric square root
    of the base-cell Gram matrix, a plain rotation is fitted to Du T^{-1}
    and pulled back as R = fitted T.  Both sides integrate with Lebesgue
    measure; the deviation norms use the local Gram matrix of each cell.
    """
    grid = u.grid
    if u.ambient_dim != grid.dim:
        raise ValueError("metric rigidity needs an equidimensional map")
    if g.grid != grid:
        raise ValueError("map and metric live on different grids")
    if base_index is None:
        base_index = tuple(c // 2 for c in grid.cell_shape)
    base_index = _as_cell_index(grid, base_index)

    base_gram = g.cell_grams[base_index]
    t_mat = spd_sqrt(base_gram)
    du = u.differential.reshape(-1, grid.dim, grid.dim)
    fit = euclidean_best_rotation(du @ np.linalg.inv(t_mat), grid.cell_volume, p, mask)
    rotation = fit.rotation @ t_mat

    if mask is None:
        mask = np.ones(du.shape[0], dtype=bool)
    else:
        mask = np.asarray(mask, dtype=bool).reshape(-1)
    inv_sqrt = g.cell_inv_sqrt.reshape(-1, grid.dim, grid.dim)[mask]
    deviation = (du[mask] - rotation) @ inv_sqrt
    lhs = float(grid.cell_volume * np.sum(_flat_norms(deviation) ** p))
    stretch = float(
        grid.cell_volume
        * np.sum(isometry_defect(du[mask] @ inv_sqrt, oriented=True) ** p)
    )
    osc, _ = oscillation_and_diameter(g, tuple((0, n) for n in grid.cell_shape))
    osc_term = grid.volume * osc**p
    constant = _guarded_ratio(lhs, osc_term + stretch)
    return RigidityReport(
        p=p,
        base_index=base_index,
        rotation=rotation,
        lhs=lhs,
        osc_term=osc_term,
        stretch=stretch,
        bend_scale=0.0,
        plane_variation=0.0,
        constant=constant,
    )


@dataclass(frozen=True, eq=False)
class PlaneField:
    """Per-cell oriented tangent planes of an immersion and their complements."""

    grid: GridDomain
    frames: np.ndarray
    complements: np.ndarray
    degenerate: np.ndarray

    def plane(self, index) -> OrientedSubspace:
        return OrientedSubspace(self.frames[_as_cell_index(self.grid, index)])

    def complement(self, index) -> OrientedSubspace:
        return OrientedSubspace(self.complements[_as_cell_index(self.grid, index)])


def tangent_plane_field(u: ImmersionField) -> PlaneField:
    """Oriented span of the differential columns at every cell.

    Degenerate cells get placeholder coordinate frames so the arrays stay
    rectangular; they remain flagged and every consumer skips them.
    """
    du = u.differential
    d = u.grid.dim
    big = u.target.ambient_dim

    q, r = np.linalg.qr(du)
    signs = np.sign(np.diagonal(r, axis1=-2, axis2=-1))
    signs = np.where(signs == 0.0, 1.0, signs)
    frames = q * signs[..., None, :]

    if u.target.kind == "euclidean":
        comp = u.normal[..., :, None]
    else:
        radial = u.cell_points / np.linalg.norm(u.cell_points, axis=-1, keepdims=True)
        comp = np.stack([u.normal, radial], axis=-1)
    comp = comp.copy()
    flip = np.linalg.det(np.concatenate([frames, comp], axis=-1)) < 0
    comp[flip, :, -1] = -comp[flip, :, -1]

    frames[u.degenerate] = np.eye(big)[:, :d]
    comp[u.degenerate] = np.eye(big)[:, d:]
    return PlaneField(u.grid, frames, comp, u.degenerate.copy())


def _oriented_gap_sq(comps: np.ndarray, base: np.ndarray) -> np.ndarray:
    """Squared oriented-subspace distance of each complement frame to `base`.

    Closed forms for the only codimensions the immersion targets produce:
    lines (r = 1) and planes (r = 2), where the optimal aligning rotation
    angle is explicit.
    """
    r = comps.shape[-1]
    if r == 1:
        dots = comps[..., :, 0] @ base[:, 0]
        return np.clip(2.0 - 2.0 * dots, 0.0, None)
    if r == 2:
        spun = np.stack([base[:, 1], -base[:, 0]], axis=-1)
        a = np.einsum("...dk,dk->...", comps, base)
        b = np.einsum("...dk,dk->...", comps, spun)
        return np.clip(4.0 - 2.0 * np.hypot(a, b), 0.0, None)
    raise ValueError("complement codimension above 2 is not supported")


def choose_base_point(planes: PlaneField, p: float = 2.0, seed: int = 0) -> tuple[int, ...]:
    """Cell whose complement minimizes the summed oriented-gap p-power.

    The sum always runs over every non-degenerate cell; only the candidate
    set is subsampled (seeded, without replacement) once the grid exceeds
    4096 cells.  Ties break to the lowest linear cell index.
    """
    good = ~planes.degenerate.reshape(-1)
    if not good.any():
        raise DegenerateFieldError("no non-degenerate cells to anchor at")
    shape = planes.complements.shape
    comps = planes.complements.reshape(-1, shape[-2], shape[-1])
    good_idx = np.nonzero(good)[0]
    if good_idx.size > CANDIDATE_CAP:
        rng = np.random.default_rng(seed)
        candidates = np.sort(rng.choice(good_idx, CANDIDATE_CAP, replace=False))
    else:
        candidates = good_idx

    pool = comps[good]
    r = shape[-1]
    if r == 1 and p == 2.0:
        # sum |w_c - w_y|^2 = 2 N - 2 <w_c, sum w_y>, so one pass suffices
        total = pool[:, :, 0].sum(axis=0)
        scores = -(comps[candidates][:, :, 0] @ total)
    elif r in (1, 2):
        scores = np.empty(candidates.size)
        flat_pool = pool.reshape(pool.shape[0], -1)
        if r == 2:
            spun_pool = np.stack([pool[:, :, 1], -pool[:, :, 0]], axis=-1)
            spun_flat = spun_pool.reshape(pool.shape[0], -1)
        for lo in range(0, candidates.size, 512):
            block = comps[candidates[lo : lo + 512]].reshape(-1, shape[-2] * shape[-1])
            if r == 1:
                gap_sq = np.clip(2.0 - 2.0 * block @ flat_pool.T, 0.0, None)
            else:
                a = block @ flat_pool.T
                b = block @ spun_flat.T
                gap_sq = np.clip(4.0 - 2.0 * np.hypot(a, b), 0.0, None)
            scores[lo : lo + 512] = np.sum(gap_sq ** (p / 2.0), axis=-1)
    else:
        raise ValueError("complement codimension above 2 is not supported")

    winner = int(candidates[int(np.argmin(scores))])
    return tuple(int(i) for i in np.unravel_index(winner, planes.grid.cell_shape))


def local_rigidity(
    u: ImmersionField,
    g: MetricField,
    p: float = 2.0,
    seed: int = 0,
    base_index=None,
) -> RigidityReport:
    """Full constructive pipeline for an immersed cube patch.

    Planes are fitted per cell, a base cell is chosen by the summed
    oriented-gap criterion, the immersion is flattened through the base
    plane's frame, the equidimensional fit runs there, and the result is
    pushed back into the target.  The right-hand side carries the metric
    oscillation, the stretch energy, and the diameter-scaled excess energy;
    the plane-variation statistic is reported alongside.
    """
    if g.grid != u.grid:
        raise ValueError("immersion and metric live on different grids")
    planes = tangent_plane_field(u)
    if base_index is None:
        base_index = choose_base_point(planes, p, seed)
    else:
        base_index = _as_cell_index(u.grid, base_index)
        if planes.degenerate[base_index]:
            raise ValueError("requested base cell is degenerate")

    frame = planes.frames[base_index]
    flattened = GridMap(u.grid, u.values @ frame, u.mode)
    mask = ~u.degenerate.reshape(-1)
    inner = metric_rigidity(flattened, g, base_index, p, mask)
    rotation = frame @ inner.rotation

    grid = u.grid
    du = u.differential.reshape(-1, u.target.ambient_dim, grid.dim)
    inv_sqrt = g.cell_inv_sqrt.reshape(-1, grid.dim, grid.dim)
    deviation = (du[mask] - rotation) @ inv_sqrt[mask]
    lhs = float(grid.cell_volume * np.sum(_flat_norms(deviation) ** p))

    report = energies(u, g, p=p)
    bend_scale = grid.diameter**p * report.excess
    comps = planes.complements.reshape(-1, u.target.ambient_dim, u.target.ambient_dim - grid.dim)
    gaps_sq = _oriented_gap_sq(comps[mask], planes.complements[base_index])
    plane_variation = float(grid.cell_volume * np.sum(gaps_sq ** (p / 2.0)))

    constant = _guarded_ratio(lhs, inner.osc_term + report.stretch + bend_scale)
    return RigidityReport(
        p=p,
        base_index=base_index,
        rotation=rotation,
        lhs=lhs,
        osc_term=inner.osc_term,
        stretch=report.stretch,
        bend_scale=bend_scale,
        plane_variation=plane_variation,
        constant=constant,
    )


@dataclass(frozen=True, eq=False)
class SubcubeFit:
    """One subcube's rigidity report plus the geometry used by the bounds."""

    index: tuple[int, ...]
    corner: tuple[int, ...]
    report: RigidityReport
    oscillation: float
    tripled_oscillation: float
    diameter: float


@dataclass(frozen=True, eq=False)
class RotationField:
    """Piecewise-constant fitted maps on a uniform partition into t^d subcubes."""

    grid: GridDomain
    metric: MetricField
    t: int
    p: float
    fits: tuple[SubcubeFit, ...]
    rotations: np.ndarray
    residual: float

    def rotation_at(self, points: np.ndarray) -> np.ndarray:
        """Value of the piecewise-constant field at arbitrary domain points."""
        points = np.asarray(points, dtype=float)
        side = self.grid.length / self.t
        idx = np.clip((points // side).astype(int), 0, self.t - 1)
        return self.rotations[tuple(np.moveaxis(idx, -1, 0))]


def multiscale_fit(
    u: ImmersionField, g: MetricField, t: int, p: float = 2.0, seed: int = 0
) -> RotationField:
    """Fit every subcube of the t-fold uniform partition independently.

    Each subcube runs the full local pipeline on the restricted fields; the
    per-subcube lhs values integrate over disjoint subcubes, so their sum is
    the global residual of the assembled piecewise-constant field.
    """
    grid = u.grid
    if t < 1 or grid.resolution % t != 0:
        raise ValueError(f"partition parameter {t} does not divide resolution {grid.resolution}")
    block = grid.resolution // t
    d = grid.dim

    fits = []
    rotations = np.zeros((t,) * d + (u.target.ambient_dim, d))
    for index in itertools.product(range(t), repeat=d):
        corner = tuple(block * i for i in index)
        sub_u = u.restrict(corner, block)
        sub_g = g.restrict(corner, block)
        rep = local_rigidity(sub_u, sub_g, p, seed)
        box = tuple((c, c + block) for c in corner)
        osc, diam = oscillation_and_diameter(g, box)
        tripled = tuple(
            (max(0, c - block), min(grid.resolution, c + 2 * block)) for c in corner
        )
        osc3, _ = oscillation_and_diameter(g, tripled)
        fits.append(SubcubeFit(index, corner, rep, osc, osc3, diam))
        rotations[index] = rep.rotation

    residual = float(sum(f.report.lhs for f in fits))
    return RotationField(grid, g, t, p, tuple(fits), rotations, residual)


@dataclass(frozen=True)
class TranslationModulus:
    """Shifted-difference integral of a rotation field over its safe region."""

    shift: tuple[float, ...]
    value: float
    covered_fraction: float


def translation_modulus(field: RotationField, zeta, p: float | None = None) -> TranslationModulus:
    """Integral of |G(x + zeta) - G(x)|^p over the admissible subcubes.

    A subcube is admissible when its tripled cube and the shifted tripled
    cube both stay inside the closed domain cube; shifts at least as long as
    the domain side leave nothing admissible.
    """
    grid = field.grid
    zeta = np.asarray(zeta, dtype=float).reshape(-1)
    if zeta.shape[0] != grid.dim:
        raise ValueError("shift vector dimension does not match the grid")
    if p is None:
        p = field.p
    empty = TranslationModulus(tuple(zeta.tolist()), 0.0, 0.0)
    if np.linalg.norm(zeta) >= grid.length:
        return empty

    t = field.t
    side = grid.length / t
    tol = 1e-9 * grid.length
    per_axis = []
    for a in range(grid.dim):
        j = np.arange(t)
        inner = (j >= 1) & (j <= t - 2)
        shifted = ((j - 1) * side + zeta[a] >= -tol) & ((j + 2) * side + zeta[a] <= grid.length + tol)
        per_axis.append(inner & shifted)
    admissible = per_axis[0]
    for ok in per_axis[1:]:
        admissible = admissible[..., None] & ok
    count = int(admissible.sum())
    if count == 0:
        return empty

    block = grid.resolution // t
    sub_of_cell = np.indices(grid.cell_shape) // block
    cell_ok = admissible[tuple(sub_of_cell)].reshape(-1)
    centers = grid.cell_centers().reshape(-1, grid.dim)[cell_ok]
    from_idx = tuple(ix.reshape(-1)[cell_ok] for ix in sub_of_cell)
    to_idx = tuple(np.clip((centers + zeta) // side, 0, t - 1).astype(int).T)
    diff = field.rotations[to_idx] - field.rotations[from_idx]
    inv_sqrt = field.metric.cell_inv_sqrt.reshape(-1, grid.dim, grid.dim)[cell_ok]
    value = float(grid.cell_volume * np.sum(_flat_norms(diff @ inv_sqrt) ** p))
    return TranslationModulus(tuple(zeta.tolist()), value, count / t**grid.dim)


@dataclass(frozen=True, eq=False)
class AsymptoticReport:
    """Energies and convergence diagnostics along a shrinking-perturbation family."""

    p: float
    epsilons: tuple[float, ...]
    energy_reports: tuple[EnergyReport, ...]
    gaps: tuple[float, ...]
    final_defect: float
    shape_error: float | None

    @property
    def shape_error_norm(self) -> float | None:
        if self.shape_error is None:
            return None
        return self.shape_error ** (1.0 / self.p)


def asymptotic_sequence_run(
    specs, ref: ReferenceShape | None = None, p: float | None = None
) -> AsymptoticReport:
    """Run a strictly shrinking perturbation family and measure its limits.

    Members must be the perturbed-inclusion family, identical except for a
    strictly decreasing perturbation size.  Reported per member: the energy
    suite and the W^{1,p} gap of the differential to the final member.  For
    the final member: the distance to metric-compatible frames (Lebesgue
    measure) and, with a reference form, the shape-recovery error.
    """
    from .scenarios import build_scenario

    specs = list(specs)
    if len(specs) < 2:
        raise ValueError("asymptotic runs need at least two family members")
    eps = [s.epsilon for s in specs]
    if any(b >= a for a, b in zip(eps, eps[1:])):
        raise ValueError("perturbation sizes must decrease strictly")
    base = specs[0].replace(epsilon=0.0)
    for s in specs:
        if s.family != "perturbed":
            raise ValueError("asymptotic runs cover the perturbed-inclusion family")
        if s.replace(epsilon=0.0) != base:
            raise ValueError("family members may differ only in epsilon")
    if p is None:
        p = specs[0].p

    bundles = [build_scenario(s) for s in specs]
    metric = bundles[0].metric
    members = [b.u for b in bundles]
    grid = members[0].grid

    reports = tuple(energies(m, metric, ref, p=p) for m in members)
    final = members[-1]
    gaps = tuple(
        float(
            (grid.cell_volume * np.sum(_flat_norms(m.differential - final.differential) ** p))
            ** (1.0 / p)
        )
        for m in members
    )
    mask = ~final.degenerate.reshape(-1)
    du = final.differential.reshape(-1, final.target.ambient_dim, grid.dim)[mask]
    inv_sqrt = metric.cell_inv_sqrt.reshape(-1, grid.dim, grid.dim)[mask]
    final_defect = float(
        grid.cell_volume * np.sum(isometry_defect(du @ inv_sqrt, oriented=False) ** p)
    )
    shape_error = reports[-1].bending_ref if ref is not None else None
    return AsymptoticReport(
        p=p,
        epsilons=tuple(float(e) for e in eps),
        energy_reports=reports,
        gaps=gaps,
        final_defect=final_defect,
        shape_error=shape_error,
    )
