"""Keypoints-to-descriptors pipeline with drop accounting.

Keypoints whose neighborhood cannot produce a stable descriptor (empty or
fully degenerate patch, unresolvable frame, all-zero histogram) are dropped
deterministically and reported with a reason code instead of poisoning the
output with arbitrary values.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from joblib import Parallel, delayed

from ._validation import as_points
from .descriptor import DESCRIPTOR_SIZE, DescriptorParams, compute_descriptor
from .errors import (
    DegeneratePatchError,
    EmptyDescriptorError,
    EmptyPatchError,
    IllConditionedLrfError,
)
from .lrf import LrfParams, compute_lrf
from .matching import DescriptorSet
from .mesh import TriangleMesh, crop_patch

__all__ = ["DroppedKeypoint", "describe_keypoints", "DROP_REASONS"]

DROP_REASONS = ("empty_patch", "degenerate_patch", "ill_conditioned_lrf", "empty_descriptor")

_REASON_BY_ERROR = {
    EmptyPatchError: "empty_patch",
    DegeneratePatchError: "degenerate_patch",
    IllConditionedLrfError: "ill_conditioned_lrf",
    EmptyDescriptorError: "empty_descriptor",
}


@dataclass(frozen=True)
class DroppedKeypoint:
    index: int
    keypoint: np.ndarray
    reason: str


def _describe_one(mesh, keypoint, mr, desc_params, lrf_params, membership):
    patch = crop_patch(mesh, keypoint, desc_params.support_radius_mr, mr, membership)
    frame = compute_lrf(patch, lrf_params)
    return compute_descriptor(patch, frame, desc_params)


def _describe_chunk(mesh, keypoints, start, mr, desc_params, lrf_params, membership):
    rows = []
    for offset, keypoint in enumerate(keypoints):
        try:
            desc = _describe_one(mesh, keypoint, mr, desc_params, lrf_params, membership)
            rows.append((start + offset, desc))
        except tuple(_REASON_BY_ERROR) as err:
            rows.append((start + offset, _REASON_BY_ERROR[type(err)]))
    return rows


def describe_keypoints(
    mesh: TriangleMesh,
    keypoints,
    desc_params: DescriptorParams = DescriptorParams(),
    lrf_params: LrfParams = LrfParams(),
    membership: str = "centroid",
    n_jobs: int = 1,
    label: str = "",
    mr: float | None = None,
) -> tuple[DescriptorSet, list[DroppedKeypoint]]:
    """Descriptor of every keypoint that survives the pipeline.

    Returns the descriptor set (record indices refer to positions in the
    input keypoint array) and the list of dropped keypoints with reasons.
    Work is split over ``n_jobs`` processes; results are order-stable.
    ``mr`` overrides the mesh's measured resolution for unit conversion
    (used for noisy scenes whose nominal resolution is known).
    """
    keypoints = as_points(keypoints, "keypoints")
    if mr is None:
        mr = mesh.resolution
    # Warm the centroid tree before forking so each worker does not rebuild it.
    mesh._centroid_tree  # noqa: B018

    if n_jobs == 1 or len(keypoints) < 8:
        chunks = [_describe_chunk(mesh, keypoints, 0, mr, desc_params, lrf_params, membership)]
    else:
        n_chunks = max(1, min(4 * n_jobs, len(keypoints)))
        bounds = np.linspace(0, len(keypoints), n_chunks + 1, dtype=int)
        chunks = Parallel(n_jobs=n_jobs)(
            delayed(_describe_chunk)(
                mesh, keypoints[a:b], a, mr, desc_params, lrf_params, membership
            )
            for a, b in zip(bounds[:-1], bounds[1:])
            if b > a
        )

    descriptors, indices, dropped = [], [], []
    for chunk in chunks:
        for index, result in chunk:
            if isinstance(result, str):
                dropped.append(DroppedKeypoint(index, keypoints[index], result))
            else:
                indices.append(index)
                descriptors.append(result)
    if descriptors:
        dset = DescriptorSet(
            descriptors=np.vstack(descriptors),
            keypoints=keypoints[indices],
            indices=np.asarray(indices, dtype=np.int64),
            label=label,
        )
    else:
        dset = DescriptorSet(
            descriptors=np.zeros((0, DESCRIPTOR_SIZE)),
            keypoints=np.zeros((0, 3)),
            indices=np.zeros(0, dtype=np.int64),
            label=label,
        )
    return dset, dropped
