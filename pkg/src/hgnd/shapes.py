"""Procedural test meshes with rich, non-repetitive local geometry.

The benchmark protocol needs watertight models at realistic triangle counts;
scan datasets are ingested from user-supplied PLY files and are not bundled,
so these generators provide deterministic stand-ins (seeded bump fields on a
sphere, a rippled torus, an open height-field patch) for tests, demos, and
the acceptance suite.
"""

from __future__ import annotations

import numpy as np

from .mesh import TriangleMesh

__all__ = ["icosphere", "bumpy_sphere", "rippled_torus", "height_field_patch"]


def icosphere(subdivisions: int = 4, radius: float = 1.0) -> TriangleMesh:
    """Geodesic sphere by repeated edge-midpoint subdivision of an icosahedron."""
    t = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array([
        [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
        [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
        [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
    ], dtype=np.float64)
    verts /= np.linalg.norm(verts[0])
    faces = np.array([
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ], dtype=np.int64)

    for _ in range(subdivisions):
        edges = np.sort(np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]]), axis=1)
        uniq, inverse = np.unique(edges, axis=0, return_inverse=True)
        mids = verts[uniq[:, 0]] + verts[uniq[:, 1]]
        mids /= np.linalg.norm(mids, axis=1)[:, None]
        mid_index = len(verts) + np.arange(len(uniq))
        verts = np.vstack([verts, mids])
        m01 = mid_index[inverse[: len(faces)]]
        m12 = mid_index[inverse[len(faces): 2 * len(faces)]]
        m20 = mid_index[inverse[2 * len(faces):]]
        faces = np.concatenate([
            np.column_stack([faces[:, 0], m01, m20]),
            np.column_stack([faces[:, 1], m12, m01]),
            np.column_stack([faces[:, 2], m20, m12]),
            np.column_stack([m01, m12, m20]),
        ])
    return TriangleMesh(verts * radius, faces, validate=False)


def _bump_field(directions: np.ndarray, n_bumps: int, amplitude: float,
                width_range: tuple[float, float], rng: np.random.Generator) -> np.ndarray:
    """Sum of random angular Gaussian bumps evaluated at unit directions."""
    centers = rng.standard_normal((n_bumps, 3))
    centers /= np.linalg.norm(centers, axis=1)[:, None]
    widths = rng.uniform(*width_range, n_bumps)
    amps = rng.uniform(-amplitude, amplitude, n_bumps)
    out = np.zeros(len(directions))
    for c, w, a in zip(centers, widths, amps):
        ang = np.arccos(np.clip(directions @ c, -1.0, 1.0))
        out += a * np.exp(-(ang / w) ** 2)
    return out


def bumpy_sphere(subdivisions: int = 5, radius: float = 1.0, n_bumps: int = 60,
                 amplitude: float = 0.12, seed: int = 0) -> TriangleMesh:
    """Sphere with a seeded multi-scale radial bump field.

    Bump widths span coarse to fine so every neighborhood at descriptor scale
    carries distinctive curvature.
    """
    rng = np.random.default_rng(seed)
    base = icosphere(subdivisions, 1.0)
    dirs = base.vertices / np.linalg.norm(base.vertices, axis=1)[:, None]
    r = np.full(len(dirs), radius)
    r += radius * _bump_field(dirs, n_bumps, amplitude, (0.15, 0.6), rng)
    r += radius * _bump_field(dirs, 2 * n_bumps, amplitude / 2, (0.05, 0.15), rng)
    return TriangleMesh(dirs * r[:, None], base.triangles, validate=False)


def rippled_torus(n_major: int = 160, n_minor: int = 80, major_radius: float = 3.0,
                  minor_radius: float = 1.0, n_waves: int = 9, ripple: float = 0.15,
                  seed: int = 0) -> TriangleMesh:
    """Torus whose tube radius ripples with seeded random phases."""
    rng = np.random.default_rng(seed)
    phases = rng.uniform(0, 2 * np.pi, 4)
    amps = rng.uniform(0.4, 1.0, 4)
    u = np.linspace(0, 2 * np.pi, n_major, endpoint=False)
    v = np.linspace(0, 2 * np.pi, n_minor, endpoint=False)
    uu, vv = np.meshgrid(u, v, indexing="ij")
    rr = minor_radius * (
        1.0
        + ripple * amps[0] * np.sin(n_waves * uu + phases[0])
        + ripple * amps[1] * np.cos((n_waves - 2) * uu + 2 * vv + phases[1])
        + ripple * amps[2] * np.sin(3 * vv + phases[2])
        + ripple * amps[3] * np.sin((n_waves + 3) * uu - vv + phases[3])
    )
    x = (major_radius + rr * np.cos(vv)) * np.cos(uu)
    y = (major_radius + rr * np.cos(vv)) * np.sin(uu)
    z = rr * np.sin(vv)
    verts = np.column_stack([x.ravel(), y.ravel(), z.ravel()])

    idx = np.arange(n_major * n_minor).reshape(n_major, n_minor)
    i_next = np.roll(idx, -1, axis=0)
    j_next = np.roll(idx, -1, axis=1)
    ij_next = np.roll(i_next, -1, axis=1)
    quads = np.stack([idx, i_next, ij_next, j_next], axis=-1).reshape(-1, 4)
    faces = np.concatenate([quads[:, [0, 1, 2]], quads[:, [0, 2, 3]]])
    return TriangleMesh(verts, faces, validate=False)


def height_field_patch(nx: int = 40, ny: int = 40, extent: float = 2.0,
                       n_bumps: int = 12, amplitude: float = 0.3,
                       anisotropy: float = 2.0, seed: int = 0) -> TriangleMesh:
    """Open rectangular surface z = f(x, y) with seeded Gaussian bumps.

    ``anisotropy`` stretches x relative to y so the principal directions of
    the patch are well separated, which keeps frames well-conditioned.
    """
    rng = np.random.default_rng(seed)
    xs = np.linspace(-extent * anisotropy, extent * anisotropy, nx)
    ys = np.linspace(-extent, extent, ny)
    xx, yy = np.meshgrid(xs, ys, indexing="ij")
    zz = np.zeros_like(xx)
    centers = rng.uniform(-extent, extent, (n_bumps, 2))
    widths = rng.uniform(0.2, 0.8, n_bumps) * extent
    amps = rng.uniform(-amplitude, amplitude, n_bumps)
    for (cx, cy), w, a in zip(centers, widths, amps):
        zz += a * np.exp(-(((xx - cx * anisotropy) ** 2) + (yy - cy) ** 2) / w**2)
    verts = np.column_stack([xx.ravel(), yy.ravel(), zz.ravel()])

    idx = np.arange(nx * ny).reshape(nx, ny)
    a = idx[:-1, :-1].ravel()
    b = idx[1:, :-1].ravel()
    c = idx[1:, 1:].ravel()
    d = idx[:-1, 1:].ravel()
    faces = np.concatenate([np.column_stack([a, b, c]), np.column_stack([a, c, d])])
    return TriangleMesh(verts, faces, validate=False)
