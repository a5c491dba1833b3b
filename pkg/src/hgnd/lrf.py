"""Local reference frame from the weighted scatter matrix of a surface patch.

The frame is built in two steps: (i) an area- and distance-weighted sum of
closed-form per-triangle second moments about the keypoint gives a symmetric
3x3 scatter matrix whose leading eigenvectors provide the x/y axis candidates;
(ii) the axis signs are disambiguated by the weighted projection of centroid
offsets, and z completes the frame as y cross x. The result is unique and
equivariant under rigid motion whenever the eigenvalue gaps are resolvable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._validation import as_point, check_positive
from .errors import DegeneratePatchError, IllConditionedLrfError
from .mesh import LocalSurfacePatch

__all__ = [
    "LrfParams",
    "Lrf",
    "triangle_scatter",
    "distance_weight",
    "patch_scatter",
    "eigen_axes",
    "disambiguate",
    "compute_lrf",
]


@dataclass(frozen=True)
class LrfParams:
    """Parameters of the frame construction.

    ``sigma_d_mr`` is the width of the Gaussian distance weight in mr units
    (independent of the descriptor's much wider length weight). Frames whose
    scatter eigenvalue gaps fall below ``gap_tol`` relative to the largest
    eigenvalue are rejected as ill-conditioned instead of returning an
    arbitrary axis choice.
    """

    sigma_d_mr: float = 5.0
    gap_tol: float = 1e-6

    def __post_init__(self):
        check_positive("sigma_d_mr", self.sigma_d_mr)
        check_positive("gap_tol", self.gap_tol)


@dataclass(frozen=True)
class Lrf:
    """Orthonormal frame (x, y, z) attached to a keypoint, with z = y cross x."""

    x: np.ndarray
    y: np.ndarray
    z: np.ndarray

    def as_matrix(self) -> np.ndarray:
        """Rows are the axes; world-to-frame coordinates are ``m @ (v - p)``."""
        return np.vstack([self.x, self.y, self.z])


def triangle_scatter(p1, p2, p3, keypoint) -> np.ndarray:
    """Closed-form second moment of one triangle's surface about the keypoint.

    Equals the area-normalized integral of ``(q - keypoint)(q - keypoint)^T``
    over the triangle: with offsets ``d_m`` of the vertices from the keypoint,

        M = (sum_mn d_m d_n^T + sum_m d_m d_m^T) / 12
    """
    d = np.stack([as_point(p1), as_point(p2), as_point(p3)]) - as_point(keypoint, "keypoint")
    s = d.sum(axis=0)
    return (np.outer(s, s) + d.T @ d) / 12.0


def _triangle_scatters(vertices: np.ndarray, triangles: np.ndarray, keypoint: np.ndarray) -> np.ndarray:
    """Vectorized triangle_scatter for all triangles; returns (m, 3, 3)."""
    d = vertices[triangles] - keypoint          # (m, 3 vertices, 3 coords)
    s = d.sum(axis=1)
    return (np.einsum("mi,mj->mij", s, s) + np.einsum("mki,mkj->mij", d, d)) / 12.0


def distance_weight(p_ci, keypoint, sigma_d: float):
    """Gaussian weight exp(-||p_ci - keypoint||^2 / (2 sigma_d)^2).

    Accepts a single centroid or an (m, 3) array of centroids; ``sigma_d`` is
    in the same (model) units as the points.
    """
    check_positive("sigma_d", sigma_d)
    diff = np.asarray(p_ci, dtype=np.float64) - np.asarray(keypoint, dtype=np.float64)
    sq = np.sum(diff * diff, axis=-1)
    return np.exp(-sq / (2.0 * sigma_d) ** 2)


def _patch_weights(patch: LocalSurfacePatch, sigma_d_abs: float):
    """Distance and normalized-area weights over non-degenerate triangles.

    Degenerate triangles are excluded from all sums. Returns
    (active mask, w_d, w_s, 1 / (sum w_d * sum w_s)) with the weight arrays
    restricted to active triangles.
    """
    mesh = patch.mesh
    active = ~mesh.degenerate
    if not np.any(active):
        raise DegeneratePatchError(
            f"patch at {patch.keypoint} has no triangle with positive area"
        )
    areas = mesh.areas[active]
    w_s = areas / areas.sum()
    w_d = distance_weight(mesh.centroids[active], patch.keypoint, sigma_d_abs)
    return active, w_d, w_s, 1.0 / (w_s.sum() * w_d.sum())


def patch_scatter(patch: LocalSurfacePatch, params: LrfParams = LrfParams()) -> np.ndarray:
    """Weighted scatter matrix of the patch about its keypoint.

    M = (1/sum w_s)(1/sum w_d) * sum_i w_d,i w_s,i M_i over triangles with
    positive area, where M_i is the per-triangle closed-form second moment.
    """
    active, w_d, w_s, inv_norm = _patch_weights(patch, params.sigma_d_mr * patch.mr)
    mesh = patch.mesh
    scatters = _triangle_scatters(mesh.vertices, mesh.triangles[active], patch.keypoint)
    m = inv_norm * np.einsum("m,mij->ij", w_d * w_s, scatters)
    return 0.5 * (m + m.T)  # clamp round-off asymmetry


def eigen_axes(m: np.ndarray):
    """Eigen decomposition of a symmetric 3x3 matrix, eigenvalues descending.

    Eigenvector signs follow a fixed convention (largest-magnitude component
    positive) so the output is deterministic; callers disambiguate signs from
    patch geometry afterwards.

    Returns
    -------
    (e1, e2, e3, eigenvalues) with unit, mutually orthogonal eigenvectors.
    """
    m = np.asarray(m, dtype=np.float64)
    evals, evecs = np.linalg.eigh(m)
    order = np.argsort(evals)[::-1]
    evals = evals[order]
    evecs = evecs[:, order]
    for k in range(3):
        lead = np.argmax(np.abs(evecs[:, k]))
        if evecs[lead, k] < 0:
            evecs[:, k] = -evecs[:, k]
    return evecs[:, 0], evecs[:, 1], evecs[:, 2], evals


def disambiguate(
    patch: LocalSurfacePatch,
    e1: np.ndarray,
    e2: np.ndarray,
    params: LrfParams = LrfParams(),
) -> Lrf:
    """Fix the signs of the axis candidates from the weighted centroid offsets.

    The orientation score of an axis candidate ``e`` is the weighted mean of
    ``(p_ci - keypoint) . e``; the axis is ``sign(score) * e`` with the tie
    ``score == 0`` resolved to +1. z completes the frame as y cross x.
    """
    e1 = as_point(e1, "e1")
    e2 = as_point(e2, "e2")
    if abs(float(e1 @ e2)) > 1e-6:
        raise ValueError("e1 and e2 must be orthogonal")
    active, w_d, w_s, inv_norm = _patch_weights(patch, params.sigma_d_mr * patch.mr)
    offsets = patch.mesh.centroids[active] - patch.keypoint
    w = w_d * w_s
    x_ori = inv_norm * float(w @ (offsets @ e1))
    y_ori = inv_norm * float(w @ (offsets @ e2))
    sx = -1.0 if x_ori < 0 else 1.0
    sy = -1.0 if y_ori < 0 else 1.0
    x = sx * e1
    y = sy * e2
    return Lrf(x=x, y=y, z=np.cross(y, x))


def compute_lrf(patch: LocalSurfacePatch, params: LrfParams = LrfParams()) -> Lrf:
    """Unambiguous local reference frame of a patch.

    Raises
    ------
    DegeneratePatchError
        If every triangle has zero area.
    IllConditionedLrfError
        If the scatter eigenvalue gaps are below ``params.gap_tol`` relative
        to the largest eigenvalue; such keypoints are dropped rather than
        given an arbitrary frame.
    """
    m = patch_scatter(patch, params)
    e1, e2, _e3, evals = eigen_axes(m)
    lam1, lam2, lam3 = evals
    if lam1 <= 0:
        raise IllConditionedLrfError(f"zero scatter at keypoint {patch.keypoint}")
    if (lam1 - lam2) < params.gap_tol * lam1 or (lam2 - lam3) < params.gap_tol * lam1:
        raise IllConditionedLrfError(
            f"eigenvalue gaps too small at keypoint {patch.keypoint}: {evals}"
        )
    return disambiguate(patch, e1, e2, params)
