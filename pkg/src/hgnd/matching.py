"""Descriptor matching with the nearest/second-nearest ratio test.

The search index answers exact 2-nearest-neighbor queries under Euclidean
distance, either through a K-D tree (desk-scale default) or a vectorized
linear scan (fallback for very large high-dimensional sets). Both backends
return identical results, with distance ties broken toward the lower
reference index. Descriptor sets of arbitrary dimension are supported so
externally produced descriptor files can be benchmarked through the same
pipeline.

File formats (shared by the CLI):

* CSV: one record per line: ``index,kx,ky,kz,v0,...,v{D-1}``, no header.
* Binary: magic ``HGND1\\x00``, uint32 record count, uint32 dimension, then
  per record an int64 keypoint index, 3 float64 keypoint coordinates and D
  float64 descriptor values, all little-endian.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

from ._validation import as_matrix, as_points, check_unit_interval
from .errors import FormatError, InsufficientDataError

__all__ = [
    "DescriptorSet",
    "MatchCandidate",
    "SearchIndex",
    "build_index",
    "match",
    "match_sweep",
    "save_descriptors",
    "load_descriptors",
]

logger = logging.getLogger(__name__)

_MAGIC = b"HGND1\x00"


@dataclass(frozen=True)
class DescriptorSet:
    """Parallel arrays of descriptors, their keypoints, and original indices.

    ``indices`` are the keypoint positions in the originally sampled list, so
    records of dropped keypoints can simply be omitted without renumbering.
    """

    descriptors: np.ndarray
    keypoints: np.ndarray
    indices: np.ndarray = None
    label: str = ""

    def __post_init__(self):
        desc = as_matrix(self.descriptors, "descriptors")
        kps = as_points(self.keypoints, "keypoints")
        if len(desc) != len(kps):
            raise ValueError(
                f"{len(desc)} descriptors but {len(kps)} keypoints"
            )
        idx = self.indices
        idx = np.arange(len(desc), dtype=np.int64) if idx is None else np.asarray(idx, np.int64)
        if idx.shape != (len(desc),):
            raise ValueError("indices must be one per descriptor")
        for arr in (desc, kps, idx):
            arr.setflags(write=False)
        object.__setattr__(self, "descriptors", desc)
        object.__setattr__(self, "keypoints", kps)
        object.__setattr__(self, "indices", idx)

    def __len__(self) -> int:
        return len(self.descriptors)

    @property
    def dimension(self) -> int:
        return self.descriptors.shape[1]


@dataclass(frozen=True)
class MatchCandidate:
    """Scene-to-model correspondence that passed the ratio test."""

    scene_index: int
    model_index: int
    d1: float
    d2: float
    ratio: float


class SearchIndex:
    """Exact 2-nearest-neighbor index over descriptor rows.

    Backend "auto" picks a K-D tree at desk scale and falls back to a linear
    scan for large high-dimensional sets where trees degrade; both are exact.
    """

    def __init__(self, dset: DescriptorSet, backend: str = "auto",
                 max_kdtree_points: int = 10_000, max_kdtree_dim: int = 16):
        if len(dset) < 2:
            raise InsufficientDataError(
                "need at least 2 reference descriptors for a second-nearest neighbor"
            )
        if backend == "auto":
            if len(dset) <= max_kdtree_points or dset.dimension <= max_kdtree_dim:
                backend = "kdtree"
            else:
                backend = "linear"
        if backend not in ("kdtree", "linear"):
            raise ValueError(f"unknown backend {backend!r}")
        self.backend = backend
        self.dset = dset
        self._tree = cKDTree(dset.descriptors) if backend == "kdtree" else None

    def query2(self, queries: np.ndarray):
        """Exact nearest and second-nearest distances and the nearest row index.

        Ties are broken toward the lower reference index. Returns float64
        arrays ``(d1, d2)`` and an int64 array of nearest-row indices.
        """
        queries = as_matrix(queries, "queries")
        if queries.shape[1] != self.dset.dimension:
            raise ValueError(
                f"query dimension {queries.shape[1]} != index dimension {self.dset.dimension}"
            )
        if self.backend == "kdtree":
            return self._query_kdtree(queries)
        return self._query_linear(queries)

    def _query_linear(self, queries, chunk: int = 256):
        refs = self.dset.descriptors
        n = len(queries)
        d1 = np.empty(n)
        d2 = np.empty(n)
        idx1 = np.empty(n, dtype=np.int64)
        for start in range(0, n, chunk):
            block = queries[start:start + chunk]
            dist = cdist(block, refs)
            for row in range(len(block)):
                order = np.lexsort((np.arange(dist.shape[1]), dist[row]))
                i, j = order[0], order[1]
                d1[start + row] = dist[row, i]
                d2[start + row] = dist[row, j]
                idx1[start + row] = i
        return d1, d2, idx1

    def _query_kdtree(self, queries):
        refs = self.dset.descriptors
        dd, _ = self._tree.query(queries, k=2)
        n = len(queries)
        d1 = np.empty(n)
        d2 = np.empty(n)
        idx1 = np.empty(n, dtype=np.int64)
        for row in range(n):
            # Re-rank every point within the tree's second-nearest radius with
            # plain numpy arithmetic so boundary ties and last-ulp differences
            # cannot change the result between backends.
            radius = dd[row, 1] * (1 + 1e-9) + 1e-300
            cand = np.asarray(self._tree.query_ball_point(queries[row], radius), dtype=np.int64)
            dist = np.sqrt(((refs[cand] - queries[row]) ** 2).sum(axis=1))
            order = np.lexsort((cand, dist))
            i, j = cand[order[0]], cand[order[1]]
            d1[row] = dist[order[0]]
            d2[row] = dist[order[1]]
            idx1[row] = i
        return d1, d2, idx1


def build_index(dset: DescriptorSet, backend: str = "auto", **kwargs) -> SearchIndex:
    """Build the 2-NN search index over a descriptor set (>= 2 rows required)."""
    return SearchIndex(dset, backend=backend, **kwargs)


def _ratios(d1: np.ndarray, d2: np.ndarray, label: str) -> np.ndarray:
    ratios = np.empty_like(d1)
    zero2 = d2 == 0
    if np.any(zero2):
        # d1 <= d2 == 0 forces d1 == 0: duplicate reference descriptors at the
        # query point; accept with ratio 0 and log.
        logger.warning("%d queries hit duplicate reference descriptors (d2 = 0)%s",
                       int(zero2.sum()), f" [{label}]" if label else "")
        ratios[zero2] = 0.0
    ok = ~zero2
    ratios[ok] = d1[ok] / d2[ok]
    return ratios


def match(scene: DescriptorSet, model_index: SearchIndex, epsilon: float) -> list[MatchCandidate]:
    """Ratio-test matching of every scene descriptor against the model index.

    A scene descriptor yields at most one candidate: its nearest model row,
    kept iff ``d1/d2 < epsilon``.
    """
    check_unit_interval("epsilon", epsilon)
    d1, d2, idx1 = model_index.query2(scene.descriptors)
    ratios = _ratios(d1, d2, scene.label)
    return [
        MatchCandidate(int(s), int(idx1[s]), float(d1[s]), float(d2[s]), float(ratios[s]))
        for s in np.flatnonzero(ratios < epsilon)
    ]


def match_sweep(scene: DescriptorSet, model_index: SearchIndex, eps_grid) -> dict[float, list[MatchCandidate]]:
    """Candidates at every threshold of a grid, from one shared 2-NN pass.

    The candidate set is monotonically non-decreasing in epsilon by
    construction.
    """
    eps_grid = [check_unit_interval("epsilon", e) for e in eps_grid]
    d1, d2, idx1 = model_index.query2(scene.descriptors)
    ratios = _ratios(d1, d2, scene.label)
    all_cands = [
        MatchCandidate(int(s), int(idx1[s]), float(d1[s]), float(d2[s]), float(ratios[s]))
        for s in range(len(scene))
    ]
    return {
        eps: [c for c in all_cands if c.ratio < eps]
        for eps in eps_grid
    }


# ---------------------------------------------------------------------------
# Descriptor file I/O
# ---------------------------------------------------------------------------

def save_descriptors(dset: DescriptorSet, path, fmt: str | None = None) -> None:
    """Write a descriptor set; ``fmt`` is "csv" or "binary" (default by suffix,
    ".bin"/".hgnd" binary, anything else CSV)."""
    path = Path(path)
    if fmt is None:
        fmt = "binary" if path.suffix in (".bin", ".hgnd") else "csv"
    if fmt == "csv":
        with open(path, "w", encoding="ascii", newline="\n") as fh:
            for i in range(len(dset)):
                kp = dset.keypoints[i]
                values = ",".join(repr(v) for v in dset.descriptors[i])
                fh.write(f"{dset.indices[i]},{kp[0]!r},{kp[1]!r},{kp[2]!r},{values}\n")
    elif fmt == "binary":
        dim = dset.dimension
        rec = np.dtype([("index", "<i8"), ("keypoint", "<f8", (3,)), ("values", "<f8", (dim,))])
        rows = np.empty(len(dset), dtype=rec)
        rows["index"] = dset.indices
        rows["keypoint"] = dset.keypoints
        rows["values"] = dset.descriptors
        with open(path, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(np.asarray([len(dset), dim], dtype="<u4").tobytes())
            fh.write(rows.tobytes())
    else:
        raise ValueError(f"unknown descriptor format {fmt!r}")


def load_descriptors(path, label: str | None = None) -> DescriptorSet:
    """Read a descriptor file of either format; dimension is inferred."""
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(len(_MAGIC))
        if head == _MAGIC:
            meta = np.frombuffer(fh.read(8), dtype="<u4")
            if meta.size != 2:
                raise FormatError(f"{path}: truncated descriptor header")
            count, dim = int(meta[0]), int(meta[1])
            rec = np.dtype([("index", "<i8"), ("keypoint", "<f8", (3,)), ("values", "<f8", (dim,))])
            data = fh.read()
            if len(data) != rec.itemsize * count:
                raise FormatError(
                    f"{path}: expected {rec.itemsize * count} record bytes, found {len(data)}"
                )
            rows = np.frombuffer(data, dtype=rec)
            return DescriptorSet(
                descriptors=rows["values"].astype(np.float64),
                keypoints=rows["keypoint"].astype(np.float64),
                indices=rows["index"].astype(np.int64),
                label=label if label is not None else path.stem,
            )

    raw = np.loadtxt(path, delimiter=",", ndmin=2, dtype=np.float64)
    if raw.size == 0:
        raise FormatError(f"{path}: empty descriptor file")
    if raw.shape[1] < 5:
        raise FormatError(
            f"{path}: descriptor CSV needs index, 3 coordinates and >= 1 value per line"
        )
    return DescriptorSet(
        descriptors=raw[:, 4:],
        keypoints=raw[:, 1:4],
        indices=raw[:, 0].astype(np.int64),
        label=label if label is not None else path.stem,
    )
