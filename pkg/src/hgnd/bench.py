"""Scene synthesis, ground-truth correspondences, and Recall vs 1-Precision.

The evaluation protocol: place models into a cluttered scene by rigid
transforms, optionally reduce point density and add per-vertex Gaussian noise
(both in mr units), sample keypoints uniformly from vertices, describe both
sides, match scene descriptors against all model descriptors, and sweep the
ratio threshold to draw the Recall vs 1-Precision curve. Every stochastic
stage is seeded; identical config and seed reproduce identical outputs
byte for byte.
"""

from __future__ import annotations

import hashlib
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from ._validation import check_positive, check_unit_interval
from .descriptor import DescriptorParams
from .errors import ConfigError, DegenerateOutputError, EmptyMeshError, HgndError
from .extract import describe_keypoints
from .lrf import LrfParams
from .matching import DescriptorSet, MatchCandidate, SearchIndex, match_sweep
from .mesh import RigidTransform, TriangleMesh, apply_transform, load_ply, merge_meshes, save_ply

__all__ = [
    "SceneSpec",
    "GroundTruth",
    "PrCurve",
    "BenchmarkConfig",
    "synthesize_scene",
    "decimate",
    "sample_keypoints",
    "ground_truth_correspondences",
    "pr_curve",
    "parse_config",
    "run_benchmark",
    "run_sweep",
    "default_eps_grid",
]

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SceneSpec:
    """How to build a cluttered scene: placements plus perturbations."""

    placements: tuple
    noise_sigma_mr: float = 0.0
    density_factor: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not self.placements:
            raise ValueError("scene needs at least one placed model")
        if self.noise_sigma_mr < 0:
            raise ValueError("noise_sigma_mr must be >= 0")
        check_unit_interval("density_factor", self.density_factor)


@dataclass(frozen=True)
class GroundTruth:
    """Per-placement rigid transforms and the correspondence tolerance (mr)."""

    placements: tuple
    tolerance_mr: float = 2.0

    def __post_init__(self):
        check_positive("tolerance_mr", self.tolerance_mr)


def synthesize_scene(models, spec: SceneSpec, tolerance_mr: float = 2.0):
    """Merge transformed models, then decimate, then add Gaussian vertex noise.

    ``models`` maps model id to TriangleMesh. The noise standard deviation is
    ``noise_sigma_mr`` times the scene's nominal resolution, applied
    independently per coordinate. Deterministic given ``spec.seed``.

    Returns (scene mesh, ground truth, nominal mr). Nominal mr is the
    resolution after decimation but before noise: noise models measurement
    error and inflates measured edge lengths without changing the sampling
    density of the underlying surface, so mr-derived radii and tolerances use
    the pre-noise value.
    """
    placed = []
    for model_id, transform in spec.placements:
        placed.append(apply_transform(models[model_id], transform))
    scene = placed[0] if len(placed) == 1 else merge_meshes(placed)
    if spec.density_factor < 1.0:
        scene = decimate(scene, spec.density_factor)
    nominal_mr = scene.resolution
    if spec.noise_sigma_mr > 0.0:
        std = spec.noise_sigma_mr * nominal_mr
        rng = np.random.default_rng(spec.seed)
        noisy = scene.vertices + rng.normal(0.0, std, scene.vertices.shape)
        scene = TriangleMesh(noisy, scene.triangles, validate=False)
    gt = GroundTruth(placements=tuple(spec.placements), tolerance_mr=tolerance_mr)
    return scene, gt, nominal_mr


def decimate(mesh: TriangleMesh, factor: float) -> TriangleMesh:
    """Vertex-clustering simplification to about ``factor`` of the vertex count.

    Vertices are merged per uniform-grid cell (representative: cluster mean)
    with the cell size bisected until the cluster count is within 10% of the
    target; collapsed and duplicate triangles are removed. ``factor`` 1
    returns the mesh unchanged.
    """
    factor = check_unit_interval("density_factor", factor)
    if factor == 1.0:
        return mesh
    target = int(round(factor * mesh.n_vertices))
    if target < 4:
        raise DegenerateOutputError(
            f"decimation target {target} vertices is below the minimum of 4"
        )

    verts = mesh.vertices
    lo_corner = verts.min(axis=0)
    diag = float(np.linalg.norm(verts.max(axis=0) - lo_corner))
    if diag == 0.0:
        raise DegenerateOutputError("mesh has zero extent")

    def cluster_count(cell: float) -> int:
        cells = np.floor((verts - lo_corner) / cell).astype(np.int64)
        return len(np.unique(cells, axis=0))

    lo, hi = diag * 1e-6, diag  # small cell -> many clusters, large -> few
    best_cell, best_err = hi, np.inf
    for _ in range(60):
        mid = np.sqrt(lo * hi)
        count = cluster_count(mid)
        err = abs(count - target)
        if err < best_err:
            best_cell, best_err = mid, err
        if err <= 0.1 * target:
            best_cell = mid
            break
        if count > target:
            lo = mid
        else:
            hi = mid

    cells = np.floor((verts - lo_corner) / best_cell).astype(np.int64)
    uniq, labels = np.unique(cells, axis=0, return_inverse=True)
    n_clusters = len(uniq)
    sums = np.zeros((n_clusters, 3))
    np.add.at(sums, labels, verts)
    counts = np.bincount(labels, minlength=n_clusters)
    reps = sums / counts[:, None]

    tri = labels[mesh.triangles]
    ok = (tri[:, 0] != tri[:, 1]) & (tri[:, 1] != tri[:, 2]) & (tri[:, 0] != tri[:, 2])
    tri = np.unique(tri[ok], axis=0)
    if n_clusters < 4 or len(tri) == 0:
        raise DegenerateOutputError("decimation collapsed the mesh")

    used, inverse = np.unique(tri, return_inverse=True)
    return TriangleMesh(reps[used], inverse.reshape(-1, 3), validate=False)


def sample_keypoints(mesh: TriangleMesh, count: int, seed: int) -> np.ndarray:
    """Uniform vertex sampling without replacement; all vertices if count exceeds them."""
    if count < 1:
        raise ValueError("count must be >= 1")
    if mesh.n_vertices == 0:
        raise EmptyMeshError("cannot sample keypoints from a mesh with no vertices")
    if count >= mesh.n_vertices:
        return mesh.vertices.copy()
    rng = np.random.default_rng(seed)
    idx = rng.choice(mesh.n_vertices, size=count, replace=False)
    return mesh.vertices[idx]


def _tolerance_pairs(transformed_kps, scene_tree, scene_kps, tolerance):
    """All (distance, model_row, scene_row) pairs within tolerance."""
    pairs = []
    hits = scene_tree.query_ball_point(transformed_kps, tolerance * (1 + 1e-12))
    for i, js in enumerate(hits):
        for j in js:
            d = float(np.linalg.norm(transformed_kps[i] - scene_kps[j]))
            if d <= tolerance:
                pairs.append((d, i, j))
    return pairs


def _greedy_assign(pairs):
    """1:1 assignment, ascending distance, ties by (model row, scene row)."""
    used_model, used_scene, out = set(), set(), []
    for d, i, j in sorted(pairs):
        if i not in used_model and j not in used_scene:
            used_model.add(i)
            used_scene.add(j)
            out.append((i, j))
    return sorted(out)


def ground_truth_correspondences(model_kps, scene_kps, transform: RigidTransform,
                                 tolerance: float) -> list[tuple[int, int]]:
    """Relevant matches (TP+FN) between one placed model's keypoints and the scene.

    Pair (i, j) is kept when the transformed model keypoint i lies within
    ``tolerance`` (model units) of scene keypoint j, assigned greedily by
    ascending distance so each scene keypoint is used at most once.
    """
    check_positive("tolerance", tolerance)
    model_kps = np.asarray(model_kps, dtype=np.float64)
    scene_kps = np.asarray(scene_kps, dtype=np.float64)
    if len(model_kps) == 0 or len(scene_kps) == 0:
        return []
    tree = cKDTree(scene_kps)
    pairs = _tolerance_pairs(transform.apply(model_kps), tree, scene_kps, tolerance)
    return _greedy_assign(pairs)


@dataclass(frozen=True)
class PrCurve:
    """Recall vs 1-Precision points over the ratio-threshold sweep."""

    epsilon: np.ndarray
    tp: np.ndarray
    fp: np.ndarray
    fn: np.ndarray
    recall: np.ndarray
    one_minus_precision: np.ndarray

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="ascii", newline="\n") as fh:
            fh.write("epsilon,tp,fp,fn,recall,one_minus_precision\n")
            for k in range(len(self.epsilon)):
                fh.write(
                    f"{self.epsilon[k]!r},{int(self.tp[k])},{int(self.fp[k])},"
                    f"{int(self.fn[k])},{self.recall[k]!r},{self.one_minus_precision[k]!r}\n"
                )


def pr_curve(candidates_by_eps: dict[float, list[MatchCandidate]],
             gt_pairs: list[tuple[int, int]]) -> PrCurve:
    """Score candidate sets against ground-truth pairs.

    A candidate is a true positive when its (model row, scene row) pair is in
    the ground truth; TP+FN is constant across the sweep. With no candidates
    at some threshold, 1-precision is reported as 0 (no false positives were
    emitted).
    """
    if not gt_pairs:
        raise HgndError("ground-truth correspondence set is empty; recall undefined")
    gt = {(int(i), int(j)) for i, j in gt_pairs}
    eps = sorted(candidates_by_eps)
    tp, fp = [], []
    for e in eps:
        cands = candidates_by_eps[e]
        n_tp = sum((c.model_index, c.scene_index) in gt for c in cands)
        tp.append(n_tp)
        fp.append(len(cands) - n_tp)
    tp = np.asarray(tp, dtype=np.int64)
    fp = np.asarray(fp, dtype=np.int64)
    fn = len(gt) - tp
    selected = tp + fp
    one_minus_precision = np.where(selected > 0, fp / np.maximum(selected, 1), 0.0)
    return PrCurve(
        epsilon=np.asarray(eps, dtype=np.float64),
        tp=tp,
        fp=fp,
        fn=fn,
        recall=tp / len(gt),
        one_minus_precision=one_minus_precision,
    )


def default_eps_grid(n: int = 50) -> np.ndarray:
    """n evenly spaced thresholds over (0, 1]."""
    return np.linspace(1.0 / n, 1.0, n)


# ---------------------------------------------------------------------------
# Benchmark configuration and runner
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BenchmarkConfig:
    """Everything a benchmark run depends on; mirrors the key=value file."""

    placements: tuple = ()           # (model path or id, RigidTransform)
    noise_sigma_mr: float = 0.0
    density_factor: float = 1.0
    seed: int = 0
    keypoints_per_model: int = 1000
    radius_mr: float = 8.5
    sigma_d_lrf_mr: float = 5.0
    sigma_d_hist_mr: float = 500.0
    sigma_theta: float = 500.0
    normalize: str = "l2"
    membership: str = "centroid"
    eps_grid: tuple = tuple(default_eps_grid().tolist())
    tolerance_mr: float = 2.0
    jobs: int = 1
    out_dir: str = "hgnd-bench"

    def descriptor_params(self) -> DescriptorParams:
        return DescriptorParams(
            support_radius_mr=self.radius_mr,
            sigma_d_mr=self.sigma_d_hist_mr,
            sigma_theta=self.sigma_theta,
            normalize=self.normalize,
        )

    def lrf_params(self) -> LrfParams:
        return LrfParams(sigma_d_mr=self.sigma_d_lrf_mr)

    def scene_spec(self) -> SceneSpec:
        return SceneSpec(
            placements=self.placements,
            noise_sigma_mr=self.noise_sigma_mr,
            density_factor=self.density_factor,
            seed=self.seed,
        )


_CONFIG_FLOATS = {
    "noise_sigma_mr", "density_factor", "radius_mr", "sigma_d_lrf_mr",
    "sigma_d_hist_mr", "sigma_theta", "tolerance_mr",
}
_CONFIG_INTS = {"seed", "keypoints_per_model", "jobs"}
_CONFIG_STRS = {"normalize", "membership", "out_dir"}


def parse_config(path) -> BenchmarkConfig:
    """Parse the plain-text key=value benchmark configuration.

    ``model = <path>`` opens a placement; an optional following
    ``transform = <12 reals row-major [R|t]>`` poses it (identity otherwise).
    ``eps_grid`` is either a point count or an explicit comma-separated list.
    Lines starting with ``#`` and blank lines are skipped.
    """
    path = Path(path)
    values: dict = {}
    placements: list = []
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err}") from err
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value, got {line!r}")
        key, _, val = line.partition("=")
        key = key.strip()
        val = val.strip()
        try:
            if key == "model":
                placements.append([val, RigidTransform.identity()])
            elif key == "transform":
                if not placements:
                    raise ConfigError(f"{path}:{lineno}: transform before any model")
                nums = [float(tok) for tok in val.replace(",", " ").split()]
                if len(nums) != 12:
                    raise ConfigError(
                        f"{path}:{lineno}: transform needs 12 reals, got {len(nums)}"
                    )
                placements[-1][1] = RigidTransform.from_flat12(nums)
            elif key == "eps_grid":
                if "," in val:
                    values["eps_grid"] = tuple(float(tok) for tok in val.split(","))
                else:
                    values["eps_grid"] = tuple(default_eps_grid(int(val)).tolist())
            elif key in _CONFIG_FLOATS:
                values[key] = float(val)
            elif key in _CONFIG_INTS:
                values[key] = int(val)
            elif key in _CONFIG_STRS:
                values[key] = val
            else:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        except (ValueError,) as err:
            raise ConfigError(f"{path}:{lineno}: bad value for {key!r}: {err}") from err
    if not placements:
        raise ConfigError(f"{path}: config places no models")
    return BenchmarkConfig(placements=tuple((m, t) for m, t in placements), **values)


class _StageTimer:
    def __init__(self):
        self.timings: list[tuple[str, float]] = []

    def run(self, stage: str, fn):
        start = time.perf_counter()
        result = fn()
        self.timings.append((stage, (time.perf_counter() - start) * 1e3))
        logger.info("stage %-16s %8.1f ms", stage, self.timings[-1][1])
        return result


@dataclass
class BenchReport:
    curve: PrCurve
    timings: list
    manifest: list
    gt_pairs: list
    out_dir: Path | None = None
    model_sets: dict = field(default_factory=dict)
    scene_set: DescriptorSet | None = None


def _child_seed(root: int, stream: int) -> int:
    return int(np.random.SeedSequence([root, stream]).generate_state(1)[0])


def _load_models(config: BenchmarkConfig, models: dict | None):
    """Resolve placement ids to meshes; load PLY paths not already provided."""
    resolved: dict = dict(models) if models else {}
    hashes: dict = {}
    for model_id, _ in config.placements:
        if model_id not in resolved:
            resolved[model_id] = load_ply(model_id)
            hashes[model_id] = hashlib.sha256(Path(model_id).read_bytes()).hexdigest()
        else:
            mesh = resolved[model_id]
            hashes[model_id] = hashlib.sha256(
                mesh.vertices.tobytes() + mesh.triangles.tobytes()
            ).hexdigest()
    return resolved, hashes


def run_benchmark(config: BenchmarkConfig, models: dict | None = None,
                  out_dir=None, write: bool = True) -> BenchReport:
    """End-to-end protocol run; writes curve.csv, timings.csv and manifest.txt.

    ``models`` may pre-supply meshes keyed by placement id (the CLI loads from
    PLY paths). On failure after partial progress the manifest is still
    flushed with a failure marker, then the error propagates.
    """
    timer = _StageTimer()
    out = Path(out_dir if out_dir is not None else config.out_dir)
    manifest: list[str] = []
    try:
        resolved, hashes = timer.run("load_models", lambda: _load_models(config, models))
        distinct_ids = list(dict.fromkeys(mid for mid, _ in config.placements))

        scene, gt, scene_mr = timer.run("synthesize", lambda: synthesize_scene(
            resolved, config.scene_spec(), tolerance_mr=config.tolerance_mr))

        model_kps = {
            mid: sample_keypoints(resolved[mid], config.keypoints_per_model,
                                  _child_seed(config.seed, 1 + k))
            for k, mid in enumerate(distinct_ids)
        }
        n_scene_kps = config.keypoints_per_model * len(config.placements)
        scene_kps = timer.run("sample_keypoints", lambda: sample_keypoints(
            scene, n_scene_kps, _child_seed(config.seed, 0)))

        desc_params = config.descriptor_params()
        lrf_params = config.lrf_params()

        def describe_models():
            sets = {}
            for mid in distinct_ids:
                dset, dropped = describe_keypoints(
                    resolved[mid], model_kps[mid], desc_params, lrf_params,
                    membership=config.membership, n_jobs=config.jobs, label=str(mid))
                logger.info("model %s: %d descriptors, %d dropped", mid, len(dset), len(dropped))
                sets[mid] = dset
            return sets

        model_sets = timer.run("describe_model", describe_models)
        scene_set, scene_dropped = timer.run("describe_scene", lambda: describe_keypoints(
            scene, scene_kps, desc_params, lrf_params,
            membership=config.membership, n_jobs=config.jobs, label="scene",
            mr=scene_mr))
        logger.info("scene: %d descriptors, %d dropped", len(scene_set), len(scene_dropped))

        # Concatenate model descriptor sets; rows are offset per distinct model.
        offsets = {}
        base = 0
        for mid in distinct_ids:
            offsets[mid] = base
            base += len(model_sets[mid])
        if base < 2:
            raise HgndError("fewer than 2 model descriptors survive; cannot match")
        all_model = DescriptorSet(
            descriptors=np.vstack([model_sets[mid].descriptors for mid in distinct_ids]),
            keypoints=np.vstack([model_sets[mid].keypoints for mid in distinct_ids]),
            indices=np.concatenate([model_sets[mid].indices for mid in distinct_ids]),
            label="models",
        )

        def compute_gt():
            # Correspondences are computed over described (surviving)
            # keypoints in concatenated model-row / scene-row space.
            pairs = []
            tol = config.tolerance_mr * scene_mr
            tree = cKDTree(scene_set.keypoints)
            for mid, transform in config.placements:
                rows = _tolerance_pairs(
                    transform.apply(model_sets[mid].keypoints), tree,
                    scene_set.keypoints, tol)
                pairs.extend((d, i + offsets[mid], j) for d, i, j in rows)
            return _greedy_assign(pairs)

        gt_pairs = timer.run("ground_truth", compute_gt)

        index = SearchIndex(all_model, backend="auto")
        sweep = timer.run("match_sweep", lambda: match_sweep(scene_set, index, config.eps_grid))
        curve = timer.run("pr_curve", lambda: pr_curve(sweep, gt_pairs))

        manifest.append("status = ok")
        manifest.append(f"seed = {config.seed}")
        for mid, transform in config.placements:
            manifest.append(f"model = {mid}")
            manifest.append(f"model_sha256 = {hashes[mid]}")
            manifest.append("transform = " + " ".join(repr(v) for v in transform.to_flat12()))
        for key in ("noise_sigma_mr", "density_factor", "keypoints_per_model", "radius_mr",
                    "sigma_d_lrf_mr", "sigma_d_hist_mr", "sigma_theta", "normalize",
                    "membership", "tolerance_mr"):
            manifest.append(f"{key} = {getattr(config, key)}")
        manifest.append(f"eps_grid = {','.join(repr(e) for e in config.eps_grid)}")
        manifest.append(f"scene_mr = {scene_mr!r}")
        manifest.append(f"scene_vertices = {scene.n_vertices}")
        manifest.append(f"scene_triangles = {scene.n_triangles}")
        manifest.append(f"model_descriptors = {len(all_model)}")
        manifest.append(f"scene_descriptors = {len(scene_set)}")
        manifest.append(f"gt_pairs = {len(gt_pairs)}")

        report = BenchReport(curve=curve, timings=timer.timings, manifest=manifest,
                             gt_pairs=gt_pairs, out_dir=out if write else None,
                             model_sets=model_sets, scene_set=scene_set)
        if write:
            out.mkdir(parents=True, exist_ok=True)
            curve.write_csv(out / "curve.csv")
            _write_timings(out / "timings.csv", timer.timings)
            (out / "manifest.txt").write_text("\n".join(manifest) + "\n", encoding="ascii")
        return report
    except Exception as err:
        if write:
            out.mkdir(parents=True, exist_ok=True)
            failure = [f"status = failed: {err}"] + manifest
            (out / "manifest.txt").write_text("\n".join(failure) + "\n", encoding="utf-8")
            _write_timings(out / "timings.csv", timer.timings)
        raise


def _write_timings(path, timings) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("stage,milliseconds\n")
        for stage, ms in timings:
            fh.write(f"{stage},{ms:.3f}\n")


_SWEEP_AXES = {
    "radius": "radius_mr",
    "sigma_d": "sigma_d_hist_mr",
    "sigma_theta": "sigma_theta",
}


def run_sweep(config: BenchmarkConfig, axis: str, values, models: dict | None = None,
              out_dir=None, write: bool = True):
    """One benchmark run per axis value, other parameters held constant.

    Individual failures do not stop the sweep; they are marked in the summary.
    Returns a list of (value, report or error message).
    """
    if axis not in _SWEEP_AXES:
        raise ConfigError(f"unknown sweep axis {axis!r}; expected one of {sorted(_SWEEP_AXES)}")
    field_name = _SWEEP_AXES[axis]
    out = Path(out_dir if out_dir is not None else config.out_dir)
    results = []
    for value in values:
        sub = out / f"{axis}={value:g}"
        run_cfg = replace(config, **{field_name: float(value)})
        try:
            report = run_benchmark(run_cfg, models=models, out_dir=sub, write=write)
            results.append((float(value), report))
        except HgndError as err:
            logger.error("sweep point %s=%s failed: %s", axis, value, err)
            results.append((float(value), str(err)))
    if write:
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "summary.csv", "w", encoding="ascii", newline="\n") as fh:
            fh.write(f"{axis},status,peak_recall,min_one_minus_precision\n")
            for value, res in results:
                if isinstance(res, str):
                    fh.write(f"{value!r},failed,,\n")
                else:
                    fh.write(
                        f"{value!r},ok,{res.curve.recall.max()!r},"
                        f"{res.curve.one_minus_precision.min()!r}\n"
                    )
    return results


def write_scene(scene: TriangleMesh, gt: GroundTruth, out_dir) -> None:
    """Persist a synthesized scene: scene.ply plus ground-truth transforms."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_ply(scene, out / "scene.ply")
    lines = [f"tolerance_mr = {gt.tolerance_mr}"]
    for model_id, transform in gt.placements:
        lines.append(f"model = {model_id}")
        lines.append("transform = " + " ".join(repr(v) for v in transform.to_flat12()))
    (out / "gt.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
