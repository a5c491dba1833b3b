"""96-dimensional histogram descriptor of a local surface patch.

Patch geometry is expressed in the local reference frame (keypoint at the
origin), triangle centroids and normals are projected onto the XY, XZ and YZ
coordinate planes, and each plane accumulates a 4-quadrant x 8-direction
histogram of Gaussian-weighted counts. Every normal is counted twice, in its
own 45-degree sector and in the opposite one, which removes the orientation
ambiguity of surface normals. Layout of the 96 bins is
``[plane][quadrant][direction]`` row-major with planes ordered XY, XZ, YZ.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._validation import check_positive
from .errors import EmptyDescriptorError
from .lrf import Lrf
from .mesh import LocalSurfacePatch

__all__ = [
    "DescriptorParams",
    "TransformedPatch",
    "PLANES",
    "DESCRIPTOR_SIZE",
    "transform_to_lrf",
    "project",
    "length_weight",
    "direction_weight",
    "accumulate_plane",
    "compute_descriptor",
]

PLANES = ("XY", "XZ", "YZ")
_PLANE_AXES = {"XY": (0, 1), "XZ": (0, 2), "YZ": (1, 2)}
N_QUADRANTS = 4
N_DIRECTIONS = 8
DESCRIPTOR_SIZE = len(PLANES) * N_QUADRANTS * N_DIRECTIONS  # 96

_SECTOR_WIDTH = np.pi / 4
_HALF_SECTOR = np.pi / 8


@dataclass(frozen=True)
class DescriptorParams:
    """Descriptor parameters, radii and widths in mr units where noted.

    Defaults are the tuned operating point: support radius 8.5 mr, length
    weight sigma_d 500 mr, direction weight sigma_theta 500 (dimensionless).
    ``normalize`` is "l2" (default) or "none"; projected normals shorter than
    ``min_proj_norm`` are skipped because their direction is numerically
    meaningless.
    """

    support_radius_mr: float = 8.5
    sigma_d_mr: float = 500.0
    sigma_theta: float = 500.0
    normalize: str = "l2"
    min_proj_norm: float = 1e-8

    def __post_init__(self):
        check_positive("support_radius_mr", self.support_radius_mr)
        check_positive("sigma_d_mr", self.sigma_d_mr)
        check_positive("sigma_theta", self.sigma_theta)
        check_positive("min_proj_norm", self.min_proj_norm)
        if self.normalize not in ("l2", "none"):
            raise ValueError(f"normalize must be 'l2' or 'none', got {self.normalize!r}")


@dataclass(frozen=True)
class TransformedPatch:
    """Patch geometry in frame coordinates: keypoint at the origin.

    ``centroids`` and ``normals`` have one row per triangle; degenerate
    triangles carry a zero normal and are flagged. ``mr`` is inherited from
    the source patch for unit conversion.
    """

    centroids: np.ndarray
    normals: np.ndarray
    degenerate: np.ndarray
    mr: float

    @property
    def n_triangles(self) -> int:
        return len(self.centroids)


def transform_to_lrf(patch: LocalSurfacePatch, lrf: Lrf) -> TransformedPatch:
    """Express the patch in frame coordinates.

    Vertices map to ``((v - p) . x, (v - p) . y, (v - p) . z)``; centroids are
    recomputed as transformed-vertex means and normals from the transformed
    vertices (normalized edge cross product), so their handedness follows the
    frame.
    """
    rot = lrf.as_matrix()
    mesh = patch.mesh
    verts = (mesh.vertices - patch.keypoint) @ rot.T
    tri = verts[mesh.triangles]                     # (m, 3, 3)
    centroids = tri.mean(axis=1)
    cross = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 1])
    norm = np.linalg.norm(cross, axis=1)
    normals = np.zeros_like(cross)
    ok = ~mesh.degenerate & (norm > 0)
    normals[ok] = cross[ok] / norm[ok, None]
    return TransformedPatch(
        centroids=centroids,
        normals=normals,
        degenerate=mesh.degenerate | ~ok,
        mr=patch.mr,
    )


def project(v, plane: str):
    """Drop the out-of-plane coordinate: XY -> (x, y), XZ -> (x, z), YZ -> (y, z)."""
    a, b = _PLANE_AXES[plane]
    v = np.asarray(v, dtype=np.float64)
    return v[..., a], v[..., b]


def length_weight(u, w, sigma_d: float):
    """exp(-(u^2 + w^2) / (2 sigma_d)^2): distance of the projected centroid
    from the projected keypoint, which is the origin by construction."""
    check_positive("sigma_d", sigma_d)
    u = np.asarray(u, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    return np.exp(-(u * u + w * w) / (2.0 * sigma_d) ** 2)


def direction_weight(cos_theta, sigma_theta: float):
    """exp(-1 / (2 cos(theta) sigma_theta)^2) for the in-sector angle theta.

    Sector construction guarantees ``cos_theta >= cos(22.5 deg) > 0``.
    """
    check_positive("sigma_theta", sigma_theta)
    cos_theta = np.asarray(cos_theta, dtype=np.float64)
    assert np.all(cos_theta > 0), "cos(theta) must be positive by sector construction"
    return np.exp(-1.0 / (2.0 * cos_theta * sigma_theta) ** 2)


def _quadrants(u: np.ndarray, w: np.ndarray) -> np.ndarray:
    # Coordinates exactly 0 belong to the non-negative side.
    return np.where(u >= 0, np.where(w >= 0, 0, 3), np.where(w >= 0, 1, 2))


def _sectors(u: np.ndarray, w: np.ndarray):
    """Direction sector of projected normals and the cosine of the in-sector angle.

    Sectors are centered at k * 45 deg from the +u axis (counter-clockwise),
    each spanning +-22.5 deg; a boundary angle belongs to the higher-indexed
    sector. Returns (sector index 0..7, cos(theta)).
    """
    phi = np.arctan2(w, u)
    raw = np.floor((phi + _HALF_SECTOR) / _SECTOR_WIDTH)
    theta = phi - raw * _SECTOR_WIDTH
    sector = raw.astype(np.int64) % N_DIRECTIONS
    return sector, np.cos(theta)


def accumulate_plane(
    tp: TransformedPatch, plane: str, params: DescriptorParams = DescriptorParams()
) -> np.ndarray:
    """One plane's 4x8 histogram, flattened to 32 values.

    Each contributing triangle adds ``w_d * w_theta`` to the bin addressed by
    its projected centroid's quadrant and its projected normal's sector, and
    the same amount to the opposite sector (index + 4 mod 8) in the same
    quadrant. Triangles whose projected normal is shorter than
    ``min_proj_norm`` contribute nothing.
    """
    valid = ~tp.degenerate
    nu, nw = project(tp.normals, plane)
    proj_norm = np.hypot(nu, nw)
    valid = valid & (proj_norm >= params.min_proj_norm)

    bins = np.zeros((N_QUADRANTS, N_DIRECTIONS))
    if not np.any(valid):
        return bins.ravel()

    cu, cw = project(tp.centroids, plane)
    quad = _quadrants(cu[valid], cw[valid])
    sector, cos_theta = _sectors(nu[valid], nw[valid])
    weight = length_weight(cu[valid], cw[valid], params.sigma_d_mr * tp.mr)
    weight = weight * direction_weight(cos_theta, params.sigma_theta)

    np.add.at(bins, (quad, sector), weight)
    np.add.at(bins, (quad, (sector + N_DIRECTIONS // 2) % N_DIRECTIONS), weight)
    return bins.ravel()


def compute_descriptor(
    patch: LocalSurfacePatch,
    lrf: Lrf,
    params: DescriptorParams = DescriptorParams(),
) -> np.ndarray:
    """The full 96-component descriptor of a patch in its frame.

    Concatenates the XY, XZ and YZ plane histograms in that order and
    L2-normalizes when configured.

    Raises
    ------
    EmptyDescriptorError
        If every triangle was skipped on every plane (all-zero histogram);
        callers drop the keypoint.
    """
    tp = transform_to_lrf(patch, lrf)
    bins = np.concatenate([accumulate_plane(tp, plane, params) for plane in PLANES])
    total = bins.sum()
    if total == 0.0:
        raise EmptyDescriptorError(f"all triangles skipped at keypoint {patch.keypoint}")
    if params.normalize == "l2":
        bins /= np.linalg.norm(bins)
    return bins
