"""End-to-end 6D keypoint transfer between objects with point features.

Pipeline: similarity fields -> Otsu regions on both objects -> relaxed
best-buddies correspondences -> RANSAC rigid alignment -> non-rigid
registration -> least-squares frame solve -> inverse alignment back into the
target object frame.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import DegenerateInputError, TransferStageError
from ..geometry import PointCloud, Pose
from ..keypoints import KeypointFrame
from .grids import DEFAULT_VOXEL, FeatureGrid, otsu_region, region_similarity, voxelize_cloud
from .matching import (
    RANSAC_INLIER_EPS,
    RANSAC_ITERATIONS,
    kabsch_fit,
    median_nn_feature_distance,
    ransac_rigid_align,
    relaxed_best_buddies,
)
from .nonrigid import CpdConfig, DeformationMap, nonrigid_register

__all__ = ["TransferConfig", "TransferDiagnostics", "solve_keypoint_frame", "transfer_keypoint"]


@dataclass(frozen=True)
class TransferConfig:
    voxel_cell: float = DEFAULT_VOXEL
    # feature-space best-buddies radius; None = 0.5 x median NN distance of
    # the reference region (adaptive)
    buddy_radius: float | None = None
    ransac_iterations: int = RANSAC_ITERATIONS
    ransac_inlier_eps: float = RANSAC_INLIER_EPS
    seed: int = 0
    cpd: CpdConfig = field(default_factory=CpdConfig)


@dataclass(frozen=True)
class TransferDiagnostics:
    ref_region_size: int
    tgt_region_size: int
    region_size_ratio: float
    correspondences: int
    ransac_inliers: int
    registration_residual: float
    registration_converged: bool
    otsu_threshold_ref: float
    otsu_threshold_tgt: float

    def to_json(self) -> dict:
        return {
            "ref_region_size": self.ref_region_size,
            "tgt_region_size": self.tgt_region_size,
            "region_size_ratio": self.region_size_ratio,
            "correspondences": self.correspondences,
            "ransac_inliers": self.ransac_inliers,
            "registration_residual": self.registration_residual,
            "registration_converged": self.registration_converged,
            "otsu_threshold_ref": self.otsu_threshold_ref,
            "otsu_threshold_tgt": self.otsu_threshold_tgt,
        }


def solve_keypoint_frame(
    ref_kf: KeypointFrame,
    ref_points: np.ndarray,
    deformed_points: np.ndarray,
    owner: str = "target",
) -> KeypointFrame:
    """Rigid frame whose local coordinates of the deformed points best match
    the reference frame's local coordinates of the original points.

    Minimizes sum_i ||F'(phi(p_i)) - F_ref(p_i)||^2 over rigid F', where F(p)
    denotes p expressed in frame F. Closed form via Procrustes: fit the rigid
    map taking the reference-frame coordinates onto the deformed points.
    """
    ref_points = np.asarray(ref_points, dtype=float).reshape(-1, 3)
    deformed_points = np.asarray(deformed_points, dtype=float).reshape(-1, 3)
    if len(ref_points) != len(deformed_points):
        raise ValueError("point arrays must align")
    if len(ref_points) < 3:
        raise DegenerateInputError("frame solve needs >= 3 points")
    local = ref_kf.as_pose().inverse().apply(ref_points)
    pose = kabsch_fit(local, deformed_points)
    return KeypointFrame.from_pose(pose, owner=owner, role=ref_kf.role)


def transfer_keypoint(
    ref_cloud: PointCloud,
    ref_kf: KeypointFrame,
    tgt_cloud: PointCloud,
    config: TransferConfig = TransferConfig(),
    tgt_owner: str = "target",
) -> tuple[KeypointFrame, TransferDiagnostics]:
    """Map a reference keypoint frame onto a target object.

    Both clouds are object-frame points with aligned D-dim features. Returns
    the keypoint frame in the target object frame plus diagnostics. A
    degenerate stage raises TransferStageError naming the stage.
    """
    if ref_cloud.features is None or tgt_cloud.features is None:
        raise ValueError("both clouds need features")
    if ref_cloud.feature_dim != tgt_cloud.feature_dim:
        raise ValueError("feature dimensionality mismatch")

    def stage(name, fn, *args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (DegenerateInputError, ValueError, np.linalg.LinAlgError) as e:
            raise TransferStageError(name, str(e)) from e

    ref_grid = stage("voxelize", voxelize_cloud, ref_cloud, config.voxel_cell, "reference")
    tgt_grid = stage("voxelize", voxelize_cloud, tgt_cloud, config.voxel_cell, tgt_owner)

    query_feature = ref_grid.feature_at(ref_kf.origin)
    ref_sim = stage("similarity", region_similarity, ref_grid, query_feature)
    tgt_sim = stage("similarity", region_similarity, tgt_grid, query_feature)

    ref_mask, thr_ref = stage("otsu", otsu_region, ref_sim)
    tgt_mask, thr_tgt = stage("otsu", otsu_region, tgt_sim)
    ref_region = ref_grid.select(ref_mask)
    tgt_region = tgt_grid.select(tgt_mask)
    if len(ref_region) == 0 or len(tgt_region) == 0:
        raise TransferStageError("otsu", "selected region is empty")

    d_t = config.buddy_radius
    if d_t is None:
        d_t = 0.5 * median_nn_feature_distance(ref_region)
    corr = stage("best_buddies", relaxed_best_buddies, ref_region, tgt_region, d_t)
    if len(corr) < 3:
        raise TransferStageError("best_buddies", f"only {len(corr)} correspondences")

    # alignment maps target points into the reference-aligned space
    tgt_to_ref = stage(
        "ransac",
        ransac_rigid_align,
        type(corr).from_pairs(corr.tgt_points, corr.ref_points),
        config.ransac_iterations,
        config.ransac_inlier_eps,
        config.seed,
    )
    align, inliers = tgt_to_ref

    aligned_tgt = align.apply(tgt_region.centers)
    deform = stage(
        "nonrigid", nonrigid_register, ref_region.centers, aligned_tgt, config.cpd
    )
    deformed_ref = deform.apply(ref_region.centers)
    residual = float(
        np.sqrt(((deformed_ref - _nearest(deformed_ref, aligned_tgt)) ** 2).sum(axis=1)).mean()
    )

    frame_aligned = stage(
        "frame_solve", solve_keypoint_frame, ref_kf, ref_region.centers, deformed_ref, tgt_owner
    )
    # back into the target object frame
    tgt_pose = align.inverse().compose(frame_aligned.as_pose())
    out = KeypointFrame.from_pose(tgt_pose, owner=tgt_owner, role=ref_kf.role)

    diag = TransferDiagnostics(
        ref_region_size=len(ref_region),
        tgt_region_size=len(tgt_region),
        region_size_ratio=len(ref_region) / max(1, len(tgt_region)),
        correspondences=len(corr),
        ransac_inliers=int(inliers.sum()),
        registration_residual=residual,
        registration_converged=deform.converged,
        otsu_threshold_ref=float(thr_ref),
        otsu_threshold_tgt=float(thr_tgt),
    )
    return out, diag


def _nearest(query: np.ndarray, target: np.ndarray) -> np.ndarray:
    from scipy.spatial import cKDTree

    _, idx = cKDTree(target).query(query, k=1)
    return target[idx]
