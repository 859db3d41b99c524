"""Small-dimension vector and matrix primitives (d = 2 or 3).

Every function here is pure. The batched variants (``*_batch`` or leading
array axes) are what the integrator uses in its inner loop; the scalar
forms exist for readability and for the per-agent control-law API.
"""
from __future__ import annotations

import numpy as np

from .errors import AgentCollision, NearZeroVector, NotSymmetric

EPS_ZERO = 1e-12
SYM_TOL = 1e-9


def projection_matrix(x) -> np.ndarray:
    """Orthogonal projector onto the complement of span(x): I - x x^T / |x|^2."""
    x = np.asarray(x, dtype=float)
    nrm = np.linalg.norm(x)
    if not nrm > EPS_ZERO:
        raise NearZeroVector(f"cannot project along a vector of norm {nrm:.3e}")
    g = x / nrm
    return np.eye(x.shape[0]) - np.outer(g, g)


def projection_matrices(g: np.ndarray) -> np.ndarray:
    """Stack of projectors for rows of ``g`` (shape (m, d)); rows must be unit vectors."""
    d = g.shape[-1]
    return np.eye(d) - g[..., :, None] * g[..., None, :]


def bearing(p_i, p_j) -> np.ndarray:
    """Unit vector pointing from p_i to p_j."""
    z = np.asarray(p_j, dtype=float) - np.asarray(p_i, dtype=float)
    dist = np.linalg.norm(z)
    if not dist > EPS_ZERO:
        raise AgentCollision(f"coincident points (distance {dist:.3e})")
    return z / dist


def bearings_batch(starts: np.ndarray, ends: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Bearings and distances for arrays of start/end points, shape (m, d).

    Raises AgentCollision naming the first offending row.
    """
    z = ends - starts
    dist = np.sqrt(np.einsum("ij,ij->i", z, z))
    bad = np.flatnonzero(~(dist > EPS_ZERO))
    if bad.size:
        raise AgentCollision(f"coincident endpoints on row {int(bad[0])}", agents=None)
    return z / dist[:, None], dist


def sign_vec(x) -> np.ndarray:
    """Componentwise signum with sign(0) = 0 and -0.0 normalised to 0.0."""
    return np.sign(x) + 0.0


def sig_pow(x, alpha: float) -> np.ndarray:
    """Componentwise sign(x) |x|^alpha."""
    x = np.asarray(x, dtype=float)
    return np.sign(x) * np.abs(x) ** alpha + 0.0


def boundary_layer_sign(eps: float):
    """Continuous stand-in for sign: x / (|x| + eps)."""

    def _sat(x):
        x = np.asarray(x, dtype=float)
        return x / (np.abs(x) + eps) + 0.0

    return _sat


def _check_symmetric(M: np.ndarray) -> None:
    asym = np.max(np.abs(M - np.swapaxes(M, -1, -2))) if M.size else 0.0
    if asym > SYM_TOL:
        raise NotSymmetric(f"asymmetry {asym:.3e} exceeds {SYM_TOL:g}")


def min_eigenvalues_sym(M: np.ndarray) -> np.ndarray:
    """Smallest eigenvalue of each symmetric matrix in a (..., d, d) stack.

    d = 2 uses the closed-form root of the characteristic quadratic; d = 3
    goes through LAPACK, because the cubic's trigonometric root loses about
    half the digits when the two smallest eigenvalues coincide.
    """
    M = np.asarray(M, dtype=float)
    _check_symmetric(M)
    d = M.shape[-1]
    if d == 1:
        return M[..., 0, 0].copy()
    if d == 2:
        a = M[..., 0, 0]
        c = M[..., 1, 1]
        b = 0.5 * (M[..., 0, 1] + M[..., 1, 0])
        return 0.5 * (a + c) - np.hypot(0.5 * (a - c), b)
    return np.linalg.eigvalsh(0.5 * (M + np.swapaxes(M, -1, -2)))[..., 0]


def min_eigenvalue_sym(M) -> float:
    """Smallest eigenvalue of one symmetric d x d matrix."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {M.shape}")
    return float(min_eigenvalues_sym(M))
