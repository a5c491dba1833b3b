"""Command-line surface: describe, match, synth, bench, sweep.

Progress and logs go to standard error (verbosity via the HGND_LOG
environment variable); data goes only to files. Exit codes: 0 success,
1 usage error, 2 I/O error, 3 data/format error.
"""

from __future__ import annotations

import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import click
import numpy as np

from . import __version__
from .bench import BenchmarkConfig, parse_config, run_benchmark, run_sweep, synthesize_scene, write_scene
from .descriptor import DescriptorParams
from .errors import HgndError
from .extract import describe_keypoints
from .lrf import LrfParams
from .matching import MatchCandidate, SearchIndex, load_descriptors, match, save_descriptors
from .mesh import load_ply
from .bench import sample_keypoints

logger = logging.getLogger("hgnd")


def _setup_logging() -> None:
    level = os.environ.get("HGND_LOG", "WARNING").upper()
    logging.basicConfig(
        stream=sys.stderr,
        level=getattr(logging, level, logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s",
    )


_PARAM_OPTIONS = [
    click.option("--radius-mr", type=float, default=None, help="Support radius in mr units."),
    click.option("--sigma-d-lrf-mr", type=float, default=None, help="Frame distance-weight width, mr."),
    click.option("--sigma-d-hist-mr", type=float, default=None, help="Histogram length-weight width, mr."),
    click.option("--sigma-theta", type=float, default=None, help="Histogram direction-weight width."),
    click.option("--no-normalize", is_flag=True, default=False, help="Disable final L2 normalization."),
    click.option("--membership", type=click.Choice(["centroid", "any_vertex", "all_vertices"]),
                 default=None, help="Patch membership rule."),
    click.option("--seed", type=int, default=None, help="Seed for all randomness."),
    click.option("--jobs", type=int, default=None, help="Worker processes (default: all cores)."),
]


def _add_options(options):
    def wrap(fn):
        for option in reversed(options):
            fn = option(fn)
        return fn
    return wrap


def _config_overrides(config: BenchmarkConfig, **kw) -> BenchmarkConfig:
    """Apply CLI flags over config-file values; flags win."""
    updates = {}
    mapping = {
        "radius_mr": "radius_mr",
        "sigma_d_lrf_mr": "sigma_d_lrf_mr",
        "sigma_d_hist_mr": "sigma_d_hist_mr",
        "sigma_theta": "sigma_theta",
        "membership": "membership",
        "seed": "seed",
        "jobs": "jobs",
        "noise_sigma_mr": "noise_sigma_mr",
        "density_factor": "density_factor",
        "keypoints_per_model": "keypoints_per_model",
        "tolerance_mr": "tolerance_mr",
    }
    for flag, field_name in mapping.items():
        if kw.get(flag) is not None:
            updates[field_name] = kw[flag]
    if kw.get("no_normalize"):
        updates["normalize"] = "none"
    if kw.get("eps_grid") is not None:
        from .bench import default_eps_grid
        text = kw["eps_grid"]
        if "," in text:
            updates["eps_grid"] = tuple(float(tok) for tok in text.split(","))
        else:
            updates["eps_grid"] = tuple(default_eps_grid(int(text)).tolist())
    return replace(config, **updates) if updates else config


@click.group(name="hgnd")
@click.version_option(__version__, prog_name="hgnd")
def cli():
    """Local surface descriptor toolkit: extraction, matching, benchmarks."""
    _setup_logging()


@cli.command()
@click.argument("mesh_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--keypoints", type=int, default=None, help="Sample this many mesh vertices.")
@click.option("--keypoints-file", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Read keypoints (one 'x y z' per line) instead of sampling.")
@click.option("--out", required=True, type=click.Path(dir_okay=False),
              help="Output descriptor file (.csv or .bin/.hgnd).")
@click.option("--format", "fmt", type=click.Choice(["csv", "binary"]), default=None,
              help="Force output format (default: by extension).")
@_add_options(_PARAM_OPTIONS)
def describe(mesh_path, keypoints, keypoints_file, out, fmt, **kw):
    """Extract descriptors for keypoints of a mesh into a descriptor file."""
    if (keypoints is None) == (keypoints_file is None):
        raise click.UsageError("exactly one of --keypoints / --keypoints-file is required")
    mesh = load_ply(mesh_path)
    if keypoints_file is not None:
        kps = np.loadtxt(keypoints_file, ndmin=2)
        if kps.shape[1] != 3:
            raise HgndError(f"{keypoints_file}: expected 3 columns, got {kps.shape[1]}")
    else:
        kps = sample_keypoints(mesh, keypoints, kw.get("seed") or 0)
    desc_params = DescriptorParams(
        support_radius_mr=kw.get("radius_mr") or 8.5,
        sigma_d_mr=kw.get("sigma_d_hist_mr") or 500.0,
        sigma_theta=kw.get("sigma_theta") or 500.0,
        normalize="none" if kw.get("no_normalize") else "l2",
    )
    lrf_params = LrfParams(sigma_d_mr=kw.get("sigma_d_lrf_mr") or 5.0)
    dset, dropped = describe_keypoints(
        mesh, kps, desc_params, lrf_params,
        membership=kw.get("membership") or "centroid",
        n_jobs=kw.get("jobs") or 1,
        label=Path(mesh_path).stem,
    )
    for drop in dropped:
        logger.warning("keypoint %d dropped: %s", drop.index, drop.reason)
    click.echo(f"{len(dset)} descriptors written, {len(dropped)} keypoints dropped", err=True)
    save_descriptors(dset, out, fmt)


@cli.command(name="match")
@click.argument("model_desc", type=click.Path(exists=True, dir_okay=False))
@click.argument("scene_desc", type=click.Path(exists=True, dir_okay=False))
@click.option("--epsilon", type=float, default=0.8, show_default=True,
              help="Ratio-test threshold in (0, 1].")
@click.option("--backend", type=click.Choice(["auto", "kdtree", "linear"]), default="auto")
@click.option("--out", required=True, type=click.Path(dir_okay=False),
              help="Candidates CSV output path.")
def match_cmd(model_desc, scene_desc, epsilon, backend, out):
    """Ratio-test match a scene descriptor file against a model descriptor file."""
    model = load_descriptors(model_desc)
    scene = load_descriptors(scene_desc)
    index = SearchIndex(model, backend=backend)
    candidates = match(scene, index, epsilon)
    _write_candidates(out, candidates, scene, model)
    click.echo(f"{len(candidates)} candidates at epsilon={epsilon}", err=True)


def _write_candidates(path, candidates: list[MatchCandidate], scene, model) -> None:
    """Candidate CSV keyed by the original keypoint indices of both files."""
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("scene_index,model_index,d1,d2,ratio\n")
        for c in candidates:
            fh.write(
                f"{scene.indices[c.scene_index]},{model.indices[c.model_index]},"
                f"{c.d1!r},{c.d2!r},{c.ratio!r}\n"
            )


@cli.command()
@click.argument("config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", type=click.Path(file_okay=False), default=None,
              help="Output directory (default: config out_dir).")
@click.option("--seed", type=int, default=None)
@click.option("--noise-sigma-mr", type=float, default=None)
@click.option("--density-factor", type=float, default=None)
def synth(config_path, out, **kw):
    """Synthesize a cluttered scene from a config; write scene.ply and gt.txt."""
    config = _config_overrides(parse_config(config_path), **kw)
    models = {mid: load_ply(mid) for mid, _ in config.placements}
    scene, gt, _mr = synthesize_scene(models, config.scene_spec(), tolerance_mr=config.tolerance_mr)
    write_scene(scene, gt, out if out is not None else config.out_dir)
    click.echo(f"scene: {scene.n_vertices} vertices, {scene.n_triangles} triangles", err=True)


@cli.command()
@click.argument("config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", type=click.Path(file_okay=False), default=None,
              help="Output directory (default: config out_dir).")
@click.option("--eps-grid", type=str, default=None,
              help="Threshold grid: a count or comma-separated values.")
@click.option("--noise-sigma-mr", type=float, default=None)
@click.option("--density-factor", type=float, default=None)
@click.option("--keypoints-per-model", type=int, default=None)
@click.option("--tolerance-mr", type=float, default=None)
@_add_options(_PARAM_OPTIONS)
def bench(config_path, out, **kw):
    """Run the full benchmark: synthesize, describe, match, PR curve."""
    config = _config_overrides(parse_config(config_path), **kw)
    report = run_benchmark(config, out_dir=out)
    peak = report.curve.recall.max() if len(report.curve.recall) else float("nan")
    click.echo(f"gt pairs: {len(report.gt_pairs)}; peak recall: {peak:.3f}", err=True)


@cli.command()
@click.argument("config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--axis", type=click.Choice(["radius", "sigma_d", "sigma_theta"]), required=True)
@click.option("--values", type=str, required=True, help="Comma-separated axis values.")
@click.option("--out", type=click.Path(file_okay=False), default=None)
@click.option("--eps-grid", type=str, default=None)
@click.option("--noise-sigma-mr", type=float, default=None)
@click.option("--density-factor", type=float, default=None)
@click.option("--keypoints-per-model", type=int, default=None)
@click.option("--tolerance-mr", type=float, default=None)
@_add_options(_PARAM_OPTIONS)
def sweep(config_path, axis, values, out, **kw):
    """Run one benchmark per axis value, holding other parameters constant."""
    config = _config_overrides(parse_config(config_path), **kw)
    try:
        parsed = [float(tok) for tok in values.split(",") if tok.strip()]
    except ValueError as err:
        raise click.UsageError(f"bad --values list: {err}") from err
    if not parsed:
        raise click.UsageError("--values is empty")
    results = run_sweep(config, axis, parsed, out_dir=out)
    failures = sum(isinstance(res, str) for _, res in results)
    click.echo(f"{len(results) - failures}/{len(results)} sweep points succeeded", err=True)
    if failures:
        sys.exit(3)


def main(argv=None) -> int:
    """Entry point with the documented exit-code mapping."""
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.UsageError as err:
        err.show(file=sys.stderr)
        return 1
    except click.ClickException as err:
        err.show(file=sys.stderr)
        return 1
    except click.exceptions.Abort:
        return 1
    except HgndError as err:
        print(f"error: {err}", file=sys.stderr)
        return 3
    except OSError as err:
        print(f"i/o error: {err}", file=sys.stderr)
        return 2
    except SystemExit as err:
        return int(err.code) if err.code is not None else 0


if __name__ == "__main__":
    sys.exit(main())
