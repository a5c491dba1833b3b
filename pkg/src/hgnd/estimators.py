"""Scikit-learn style estimators wrapping the descriptor and matching stages.

``HgndExtractor`` binds a mesh in ``fit`` and turns keypoint arrays into
descriptor rows in ``transform``; ``RatioMatcher`` indexes model descriptors
in ``fit`` and answers ratio-test queries in ``predict``/``match``. Both
expose ``get_params``/``set_params`` so they compose with model selection and
pipelines in the wider ecosystem.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import as_matrix, as_points, check_unit_interval
from .descriptor import DESCRIPTOR_SIZE, DescriptorParams
from .extract import describe_keypoints
from .lrf import LrfParams
from .matching import DescriptorSet, MatchCandidate, SearchIndex, match
from .mesh import TriangleMesh, load_ply

__all__ = ["HgndExtractor", "RatioMatcher"]


class HgndExtractor(BaseEstimator, TransformerMixin):
    """Mesh-to-descriptor transformer.

    Parameters
    ----------
    support_radius_mr : float, default=8.5
        Patch support radius in mesh-resolution units.
    sigma_d_hist_mr : float, default=500.0
        Width of the histogram length weight, mr units.
    sigma_theta : float, default=500.0
        Width of the histogram direction weight, dimensionless.
    sigma_d_lrf_mr : float, default=5.0
        Width of the frame's distance weight, mr units.
    normalize : {"l2", "none"}, default="l2"
        Final descriptor normalization.
    min_proj_norm : float, default=1e-8
        Projected normals below this norm are skipped.
    membership : {"centroid", "any_vertex", "all_vertices"}, default="centroid"
        Patch membership rule for triangles against the support sphere.
    n_jobs : int, default=1
        Worker processes for descriptor extraction.

    Attributes
    ----------
    mesh_ : TriangleMesh
        The mesh bound by ``fit``.
    mr_ : float
        Its mesh resolution (mean triangle edge length).
    drop_log_ : list of DroppedKeypoint
        Keypoints dropped during the most recent ``transform``.
    """

    def __init__(self, support_radius_mr=8.5, sigma_d_hist_mr=500.0, sigma_theta=500.0,
                 sigma_d_lrf_mr=5.0, normalize="l2", min_proj_norm=1e-8,
                 membership="centroid", n_jobs=1):
        self.support_radius_mr = support_radius_mr
        self.sigma_d_hist_mr = sigma_d_hist_mr
        self.sigma_theta = sigma_theta
        self.sigma_d_lrf_mr = sigma_d_lrf_mr
        self.normalize = normalize
        self.min_proj_norm = min_proj_norm
        self.membership = membership
        self.n_jobs = n_jobs

    def _params(self):
        return (
            DescriptorParams(
                support_radius_mr=self.support_radius_mr,
                sigma_d_mr=self.sigma_d_hist_mr,
                sigma_theta=self.sigma_theta,
                normalize=self.normalize,
                min_proj_norm=self.min_proj_norm,
            ),
            LrfParams(sigma_d_mr=self.sigma_d_lrf_mr),
        )

    def fit(self, X, y=None):
        """Bind the mesh: ``X`` is a TriangleMesh or a path to a PLY file."""
        mesh = X if isinstance(X, TriangleMesh) else load_ply(X)
        self.mesh_ = mesh
        self.mr_ = mesh.resolution
        return self

    def describe(self, X, label: str = ""):
        """Full extraction: returns (DescriptorSet, dropped keypoints)."""
        check_is_fitted(self, "mesh_")
        desc_params, lrf_params = self._params()
        return describe_keypoints(
            self.mesh_, X, desc_params, lrf_params,
            membership=self.membership, n_jobs=self.n_jobs, label=label,
        )

    def transform(self, X):
        """Descriptor rows for an (n, 3) keypoint array.

        Rows of keypoints that were dropped are NaN; the reasons are recorded
        in ``drop_log_``.
        """
        keypoints = as_points(X, "X")
        dset, dropped = self.describe(keypoints)
        out = np.full((len(keypoints), DESCRIPTOR_SIZE), np.nan)
        out[dset.indices] = dset.descriptors
        self.drop_log_ = dropped
        return out


class RatioMatcher(BaseEstimator):
    """Nearest/second-nearest ratio-test matcher over reference descriptors.

    Parameters
    ----------
    epsilon : float, default=0.8
        Ratio-test acceptance threshold in (0, 1].
    backend : {"auto", "kdtree", "linear"}, default="auto"
        Exact 2-NN backend selection.

    Attributes
    ----------
    index_ : SearchIndex
        The fitted exact 2-nearest-neighbor index.
    n_features_in_ : int
        Reference descriptor dimensionality.
    """

    def __init__(self, epsilon=0.8, backend="auto"):
        self.epsilon = epsilon
        self.backend = backend

    def fit(self, X, y=None):
        """Index the reference (model) descriptors, an (n >= 2, D) array."""
        check_unit_interval("epsilon", self.epsilon)
        X = as_matrix(X, "X")
        dset = DescriptorSet(descriptors=X, keypoints=np.zeros((len(X), 3)), label="reference")
        self.index_ = SearchIndex(dset, backend=self.backend)
        self.n_features_in_ = X.shape[1]
        return self

    def query(self, X):
        """Exact (d1, d2, nearest reference row) for each query row."""
        check_is_fitted(self, "index_")
        return self.index_.query2(as_matrix(X, "X"))

    def match(self, X, label: str = "") -> list[MatchCandidate]:
        """Candidates passing the ratio test at ``self.epsilon``."""
        check_is_fitted(self, "index_")
        scene = DescriptorSet(descriptors=as_matrix(X, "X"),
                              keypoints=np.zeros((len(X), 3)), label=label)
        return match(scene, self.index_, self.epsilon)

    def predict(self, X):
        """Nearest reference row per query, -1 where the ratio test rejects."""
        candidates = self.match(X)
        out = np.full(len(as_matrix(X, "X")), -1, dtype=np.int64)
        for c in candidates:
            out[c.scene_index] = c.model_index
        return out
