"""Kernels for metric norms, nearest isometries and oriented subspaces.

Linear maps are plain float arrays of shape (rows, cols).  A map T from
(R^d, g) into (R^D, euclidean) is measured in the metric Frobenius norm,
which equals the Euclidean Frobenius norm of T @ g^(-1/2).  Isometries from
(R^d, g) are the matrices R with R^T R = gram(g); the orientation-preserving
ones additionally have positive determinant in any positively oriented frame
of their image.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

ABS_TOL = 1e-10
REL_TOL = 1e-8

_SYMMETRY_TOL = 1e-12
_EIGENVALUE_FLOOR = 1e-14
_FRAME_TOL = 1e-10


@dataclass(frozen=True)
class SpdMetric:
    """Inner product on R^d given by a symmetric positive definite Gram matrix."""

    gram: np.ndarray

    def __post_init__(self) -> None:
        gram = np.asarray(self.gram, dtype=float)
        if gram.ndim != 2 or gram.shape[0] != gram.shape[1]:
            raise ValueError(f"Gram matrix must be square, got shape {gram.shape}")
        if not np.allclose(gram, gram.T, rtol=0.0, atol=_SYMMETRY_TOL):
            raise ValueError("Gram matrix must be symmetric (tolerance 1e-12)")
        gram = 0.5 * (gram + gram.T)
        gram.flags.writeable = False
        object.__setattr__(self, "gram", gram)
        if np.linalg.eigvalsh(gram)[0] < _EIGENVALUE_FLOOR:
            raise ValueError("Gram matrix is not positive definite")

    @property
    def dim(self) -> int:
        return self.gram.shape[0]

    @classmethod
    def euclidean(cls, dim: int) -> "SpdMetric":
        return cls(np.eye(dim))

    @cached_property
    def sqrt(self) -> np.ndarray:
        """Positive square root of the Gram matrix."""
        return spd_sqrt(self.gram)

    @cached_property
    def inv_sqrt(self) -> np.ndarray:
        """Inverse of the positive square root of the Gram matrix."""
        w, v = np.linalg.eigh(self.gram)
        return (v / np.sqrt(w)) @ v.T

    def sandwich_bound(self) -> float:
        """Smallest lam >= 1 with I/lam <= gram <= lam*I in the quadratic-form order."""
        w = np.linalg.eigvalsh(self.gram)
        return float(max(w[-1], 1.0 / w[0], 1.0))


@dataclass(frozen=True)
class OrientedSubspace:
    """Oriented d-plane in R^D, carried by a positively oriented orthonormal frame.

    The frame columns are the chosen orthonormal basis; every other positively
    oriented orthonormal frame of the same plane is frame @ Q with Q a rotation.
    """

    frame: np.ndarray

    def __post_init__(self) -> None:
        frame = np.asarray(self.frame, dtype=float)
        if frame.ndim != 2:
            raise ValueError("frame must be a (D, d) array")
        big, small = frame.shape
        if not 1 <= small <= big:
            raise ValueError(f"frame shape {frame.shape} is not a d-plane in R^D")
        if np.abs(frame.T @ frame - np.eye(small)).max() > _FRAME_TOL:
            raise ValueError("frame columns are not orthonormal (tolerance 1e-10)")
        frame = frame.copy()
        frame.flags.writeable = False
        object.__setattr__(self, "frame", frame)

    @property
    def ambient_dim(self) -> int:
        return self.frame.shape[0]

    @property
    def dim(self) -> int:
        return self.frame.shape[1]

    @classmethod
    def from_spanning(cls, vectors: np.ndarray) -> "OrientedSubspace":
        """Orthonormalize the columns of `vectors`, keeping their orientation."""
        mat = np.asarray(vectors, dtype=float)
        q, r = np.linalg.qr(mat)
        diag = np.diagonal(r)
        if np.abs(diag).min() <= _EIGENVALUE_FLOOR * max(1.0, np.abs(mat).max()):
            raise ValueError("spanning columns are linearly dependent")
        return cls(q * np.sign(diag))

    @classmethod
    def coordinate(cls, ambient_dim: int, axes: tuple[int, ...]) -> "OrientedSubspace":
        frame = np.zeros((ambient_dim, len(axes)))
        for col, axis in enumerate(axes):
            frame[axis, col] = 1.0
        return cls(frame)


def spd_sqrt(gram: np.ndarray) -> np.ndarray:
    """Positive square root of an SPD matrix (stacked input allowed).

    Eigenvalues below 1e-14 are rejected rather than clamped, so near-singular
    input fails loudly instead of silently flattening a direction.
    """
    gram = np.asarray(gram, dtype=float)
    w, v = np.linalg.eigh(gram)
    if w.min() < _EIGENVALUE_FLOOR:
        raise ValueError("matrix is not positive definite (eigenvalue below 1e-14)")
    return (v * np.sqrt(w)[..., None, :]) @ np.swapaxes(v, -1, -2)


def spd_inv_sqrt(gram: np.ndarray) -> np.ndarray:
    """Inverse positive square root of an SPD matrix (stacked input allowed)."""
    gram = np.asarray(gram, dtype=float)
    w, v = np.linalg.eigh(gram)
    if w.min() < _EIGENVALUE_FLOOR:
        raise ValueError("matrix is not positive definite (eigenvalue below 1e-14)")
    return (v / np.sqrt(w)[..., None, :]) @ np.swapaxes(v, -1, -2)


def frobenius_norm(t: np.ndarray, g: SpdMetric) -> float:
    """Frobenius norm of t as a map from (R^d, g) into Euclidean space."""
    t = np.asarray(t, dtype=float)
    if t.ndim != 2 or t.shape[1] != g.dim:
        raise ValueError(f"map shape {t.shape} does not match metric dimension {g.dim}")
    return float(np.linalg.norm(t @ g.inv_sqrt))


def metric_distance(g: SpdMetric, g2: SpdMetric) -> float:
    """Euclidean Frobenius distance between two Gram matrices."""
    if g.dim != g2.dim:
        raise ValueError("metrics live on spaces of different dimension")
    return float(np.linalg.norm(g.gram - g2.gram))


def rotation_align(m: np.ndarray) -> np.ndarray:
    """Rotation Q maximizing tr(Q^T m), with the usual determinant sign fix.

    Accepts stacked input (..., d, d).  When the optimum is not unique (tied
    smallest singular value, or rank-deficient m) the last singular direction
    is flipped, which picks one maximizer deterministically.
    """
    m = np.asarray(m, dtype=float)
    u, _, vt = np.linalg.svd(m)
    neg = np.linalg.det(u) * np.linalg.det(vt) < 0
    u = u.copy()
    u[..., :, -1] = np.where(neg[..., None], -u[..., :, -1], u[..., :, -1])
    return u @ vt


def isometry_defect(x: np.ndarray, oriented: bool = False) -> np.ndarray:
    """Frobenius distance of x (..., D, d) to matrices with orthonormal columns.

    With oriented=True (square x only) the competitors are restricted to
    rotations; a negative determinant then costs (s_min + 1)^2 instead of
    (s_min - 1)^2 through the sign flip on the smallest singular value.
    """
    x = np.asarray(x, dtype=float)
    s = np.linalg.svd(x, compute_uv=False)
    if oriented:
        if x.shape[-2] != x.shape[-1]:
            raise ValueError("oriented defect requires square maps")
        s = s.copy()
        s[..., -1] = np.where(np.linalg.det(x) < 0, -s[..., -1], s[..., -1])
    return np.sqrt(np.sum((s - 1.0) ** 2, axis=-1))


def so_set_distance(gx: SpdMetric, gy: SpdMetric) -> float:
    """Frobenius distance between the rotation sets of two metrics.

    The isometries from (R^d, gx) to Euclidean space are Q @ sqrt(gx) with Q a
    rotation, so the set distance reduces to a single orientation-constrained
    Procrustes problem between the two square roots.
    """
    if gx.dim != gy.dim:
        raise ValueError("metrics live on spaces of different dimension")
    a, b = gx.sqrt, gy.sqrt
    q = rotation_align(b @ a)
    return float(np.linalg.norm(q @ a - b))


def nearest_isometry(
    t: np.ndarray, g: SpdMetric, oriented: bool = False
) -> tuple[np.ndarray, float]:
    """Closest isometry from (R^d, g) into (R^D, euclidean) to the map t.

    Returns (r, distance) where r has r^T r = gram(g) and distance is measured
    in the metric Frobenius norm.  Writing x = t @ g^(-1/2) with thin SVD
    u s v^T, the minimizer is u v^T @ sqrt(g) and the distance is the l2 norm
    of (s - 1).  With oriented=True (square maps only) the competitor set is
    restricted to orientation-preserving isometries; if det(u v^T) < 0 the
    last singular direction is flipped, a deterministic choice among ties.
    """
    t = np.asarray(t, dtype=float)
    if t.ndim != 2 or t.shape[1] != g.dim:
        raise ValueError(f"map shape {t.shape} does not match metric dimension {g.dim}")
    rows, cols = t.shape
    if rows < cols:
        raise ValueError("map must not decrease dimension")
    if oriented and rows != cols:
        raise ValueError("oriented fit requires a square map; use a plane frame first")
    x = t @ g.inv_sqrt
    u, s, vt = np.linalg.svd(x, full_matrices=False)
    if oriented and np.linalg.det(u @ vt) < 0:
        u = u.copy()
        u[:, -1] = -u[:, -1]
        s = s.copy()
        s[-1] = -s[-1]
    r = (u @ vt) @ g.sqrt
    return r, float(np.sqrt(np.sum((s - 1.0) ** 2)))


def nearest_isometry_into_plane(
    t: np.ndarray,
    g: SpdMetric,
    plane: OrientedSubspace,
    oriented: bool = False,
    abs_tol: float = ABS_TOL,
    rel_tol: float = REL_TOL,
) -> tuple[np.ndarray, float]:
    """Closest isometry from (R^d, g) onto the oriented plane, among maps into it.

    The input must already map into the plane (checked up to tolerance).  The
    problem is solved in plane coordinates, where the frame is an isometry, so
    the returned distance equals the in-plane one.  With oriented=True the
    orientation is the one carried by the plane's frame.
    """
    t = np.asarray(t, dtype=float)
    if plane.dim != g.dim:
        raise ValueError("plane dimension does not match metric dimension")
    if t.shape != (plane.ambient_dim, g.dim):
        raise ValueError(f"map shape {t.shape} does not match plane/metric dimensions")
    coords = plane.frame.T @ t
    leak = np.linalg.norm(t - plane.frame @ coords)
    if leak > max(abs_tol, rel_tol * np.linalg.norm(t)):
        raise ValueError(f"map image leaves the plane by {leak:.3e}")
    r_plane, dist = nearest_isometry(coords, g, oriented=oriented)
    return plane.frame @ r_plane, dist


def subspace_distance(a: OrientedSubspace, b: OrientedSubspace) -> float:
    """Frame distance between two oriented planes of equal dimension.

    Minimizes the Frobenius norm of (frame_a - frame_b @ q) over rotations q,
    i.e. over all positively oriented orthonormal frames of b against the
    frame of a; the value does not depend on which frames carry the planes.
    """
    if a.ambient_dim != b.ambient_dim or a.dim != b.dim:
        raise ValueError("planes must share ambient space and dimension")
    q = rotation_align(b.frame.T @ a.frame)
    return float(np.linalg.norm(a.frame - b.frame @ q))


def oriented_complement(a: OrientedSubspace) -> OrientedSubspace:
    """Orthogonal complement, oriented so [frame_a | frame_perp] is positive.

    The concatenated determinant does not depend on which positively oriented
    frame carries `a`, so the orientation of the complement is well defined.
    """
    big, small = a.frame.shape
    if small == big:
        raise ValueError("the full space has a trivial complement")
    u = np.linalg.svd(a.frame, full_matrices=True)[0]
    w = u[:, small:].copy()
    if np.linalg.det(np.concatenate([a.frame, w], axis=1)) < 0:
        w[:, -1] = -w[:, -1]
    return OrientedSubspace(w)


def project_onto(a: OrientedSubspace, v: np.ndarray) -> np.ndarray:
    """Orthogonal projection of a vector (or of each column of a map) onto a."""
    v = np.asarray(v, dtype=float)
    if v.shape[0] != a.ambient_dim:
        raise ValueError(f"vector lives in R^{v.shape[0]}, plane in R^{a.ambient_dim}")
    return a.frame @ (a.frame.T @ v)


def orientation_preserved_under_projection(p0: OrientedSubspace, p: OrientedSubspace) -> bool:
    """Whether projecting p onto p0 maps positive frames to positive frames.

    Reads off the sign of det(frame_p0^T frame_p); a rank-deficient projection
    returns False.
    """
    if p0.ambient_dim != p.ambient_dim or p0.dim != p.dim:
        raise ValueError("planes must share ambient space and dimension")
    return bool(np.linalg.det(p0.frame.T @ p.frame) > 0.0)


@dataclass(frozen=True)
class ProjectionBoundReport:
    """Both sides of the projection-error and oriented-distance inequalities.

    projection_lhs / projection_rhs compare |P0 t - t| against |t| times the
    gap between the complements; oriented_lhs is the distance of the projected
    map to rotations onto the base plane, to be bounded by unoriented_dist
    plus a constant times complement_gap.
    """

    projection_lhs: float
    projection_rhs: float
    projection_slack: float
    oriented_lhs: float
    unoriented_dist: float
    complement_gap: float

    def oriented_slack(self, constant: float) -> float:
        return self.unoriented_dist + constant * self.complement_gap - self.oriented_lhs


def projection_error_bound_check(
    t: np.ndarray,
    g: SpdMetric,
    p0: OrientedSubspace,
    p: OrientedSubspace,
    abs_tol: float = ABS_TOL,
    rel_tol: float = REL_TOL,
) -> ProjectionBoundReport:
    """Evaluate the projection inequalities for a map t with image in p.

    The oriented inequality is only meaningful when t preserves orientation as
    a map into p; the caller controls that, this routine just measures.
    """
    t = np.asarray(t, dtype=float)
    if p0.ambient_dim != p.ambient_dim or p0.dim != p.dim:
        raise ValueError("planes must share ambient space and dimension")
    if t.shape != (p.ambient_dim, g.dim):
        raise ValueError(f"map shape {t.shape} does not match plane/metric dimensions")
    coords = p.frame.T @ t
    leak = np.linalg.norm(t - p.frame @ coords)
    if leak > max(abs_tol, rel_tol * np.linalg.norm(t)):
        raise ValueError(f"map image leaves the plane by {leak:.3e}")

    projected = project_onto(p0, t)
    gap = subspace_distance(oriented_complement(p0), oriented_complement(p))
    lhs = frobenius_norm(projected - t, g)
    rhs = frobenius_norm(t, g) * gap
    oriented_lhs = nearest_isometry_into_plane(projected, g, p0, oriented=True)[1]
    unoriented = nearest_isometry(t, g, oriented=False)[1]
    return ProjectionBoundReport(
        projection_lhs=lhs,
        projection_rhs=rhs,
        projection_slack=rhs - lhs,
        oriented_lhs=oriented_lhs,
        unoriented_dist=unoriented,
        complement_gap=gap,
    )
