"""Brute-force minimizers used as oracles for the closed-form kernels.

Everything here deliberately avoids the eigendecomposition/SVD route the
library takes: metric norms go through a Cholesky-built orthonormal basis,
isometry families are sampled as Q @ L^T with L the Cholesky factor (so that
R^T R = L L^T = gram), and minimizations walk a dense rotation-angle grid.
"""

import numpy as np

ANGLE_STEP = 1e-4


def rotation_grid(step: float = ANGLE_STEP) -> np.ndarray:
    """All 2x2 rotations with angles spaced `step` apart, shape (K, 2, 2)."""
    angles = np.arange(0.0, 2.0 * np.pi, step)
    c, s = np.cos(angles), np.sin(angles)
    qs = np.empty((angles.size, 2, 2))
    qs[:, 0, 0] = c
    qs[:, 0, 1] = -s
    qs[:, 1, 0] = s
    qs[:, 1, 1] = c
    return qs


def metric_basis(gram: np.ndarray) -> np.ndarray:
    """Columns form a gram-orthonormal basis (inverse transpose of Cholesky)."""
    return np.linalg.inv(np.linalg.cholesky(gram)).T


def metric_frobenius(t: np.ndarray, gram: np.ndarray) -> float:
    return float(np.linalg.norm(t @ metric_basis(gram)))


def isometry_samples(gram: np.ndarray, oriented: bool, qs: np.ndarray) -> np.ndarray:
    """Dense sample of the (oriented) isometries from (R^2, gram) to R^2."""
    lt = np.linalg.cholesky(gram).T
    members = qs @ lt
    if not oriented:
        members = np.concatenate([members, (qs @ np.diag([1.0, -1.0])) @ lt])
    return members


def brute_nearest_isometry(
    t: np.ndarray, gram: np.ndarray, oriented: bool, qs: np.ndarray
) -> tuple[np.ndarray, float]:
    members = isometry_samples(gram, oriented, qs)
    basis = metric_basis(gram)
    vals = np.linalg.norm((t[None] - members) @ basis, axis=(1, 2))
    k = int(np.argmin(vals))
    return members[k], float(vals[k])


def brute_so_set_distance(gram_x: np.ndarray, gram_y: np.ndarray, qs: np.ndarray) -> float:
    # min over Q1, Q2 of |Q1 Lx^T - Q2 Ly^T| collapses to a single grid because
    # multiplying both members by Q2^T on the left keeps the norm.
    lx = np.linalg.cholesky(gram_x).T
    ly = np.linalg.cholesky(gram_y).T
    vals = np.linalg.norm(qs @ lx - ly[None], axis=(1, 2))
    return float(vals.min())


def brute_subspace_distance(frame_a: np.ndarray, frame_b: np.ndarray, qs: np.ndarray) -> float:
    vals = np.linalg.norm(frame_a[None] - frame_b @ qs, axis=(1, 2))
    return float(vals.min())


def random_spd(rng: np.random.Generator, dim: int, lam_max: float = 10.0) -> np.ndarray:
    """Random SPD matrix with eigenvalues inside [1/lam_max, lam_max]."""
    eigs = rng.uniform(1.0 / lam_max, lam_max, size=dim)
    q = np.linalg.qr(rng.standard_normal((dim, dim)))[0]
    return (q * eigs) @ q.T


def random_frame(rng: np.random.Generator, ambient: int, dim: int) -> np.ndarray:
    """Random orthonormal frame with positively oriented QR convention."""
    mat = rng.standard_normal((ambient, dim))
    q, r = np.linalg.qr(mat)
    return q * np.sign(np.diagonal(r))
