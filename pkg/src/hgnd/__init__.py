"""HGND: histogram-of-normals local feature descriptor for triangle meshes.

Core pipeline: crop a local surface patch around a keypoint, build its
unambiguous local reference frame from a weighted scatter matrix, accumulate
Gaussian-weighted normal histograms over the three frame planes into a 96-D
descriptor, and match descriptor sets with a nearest/second-nearest ratio
test. The bench module evaluates the pipeline on synthesized cluttered scenes
with Recall vs 1-Precision curves.
"""

__version__ = "0.1.0"

from .descriptor import (
    DESCRIPTOR_SIZE,
    DescriptorParams,
    TransformedPatch,
    accumulate_plane,
    compute_descriptor,
    direction_weight,
    length_weight,
    project,
    transform_to_lrf,
)
from .errors import (
    ConfigError,
    DegenerateOutputError,
    DegeneratePatchError,
    EmptyDescriptorError,
    EmptyMeshError,
    EmptyPatchError,
    FormatError,
    HgndError,
    IllConditionedLrfError,
    InsufficientDataError,
    PlyFormatError,
)
from .estimators import HgndExtractor, RatioMatcher
from .extract import DroppedKeypoint, describe_keypoints
from .lrf import (
    Lrf,
    LrfParams,
    compute_lrf,
    disambiguate,
    distance_weight,
    eigen_axes,
    patch_scatter,
    triangle_scatter,
)
from .matching import (
    DescriptorSet,
    MatchCandidate,
    SearchIndex,
    build_index,
    load_descriptors,
    match,
    match_sweep,
    save_descriptors,
)
from .mesh import (
    LocalSurfacePatch,
    RigidTransform,
    TriangleMesh,
    apply_transform,
    crop_patch,
    load_ply,
    merge_meshes,
    mesh_resolution,
    save_ply,
)
from .bench import (
    BenchmarkConfig,
    GroundTruth,
    PrCurve,
    SceneSpec,
    decimate,
    default_eps_grid,
    ground_truth_correspondences,
    parse_config,
    pr_curve,
    run_benchmark,
    run_sweep,
    sample_keypoints,
    synthesize_scene,
)

__all__ = [name for name in dir() if not name.startswith("_")]
