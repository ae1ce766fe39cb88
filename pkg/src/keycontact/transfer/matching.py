"""Relaxed best-buddies feature matching and RANSAC rigid alignment."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DegenerateInputError
from ..geometry import Pose
from .grids import FeatureGrid

__all__ = [
    "CorrespondenceSet",
    "relaxed_best_buddies",
    "kabsch_fit",
    "ransac_rigid_align",
    "median_nn_feature_distance",
]

RANSAC_ITERATIONS = 2000
RANSAC_INLIER_EPS = 0.005


@dataclass(frozen=True)
class CorrespondenceSet:
    """Putative point pairs (reference -> target) with per-pair inlier flags."""

    ref_points: np.ndarray
    tgt_points: np.ndarray
    inliers: np.ndarray  # bool mask

    def __post_init__(self):
        r = np.asarray(self.ref_points, dtype=float).reshape(-1, 3)
        t = np.asarray(self.tgt_points, dtype=float).reshape(-1, 3)
        if len(r) != len(t):
            raise ValueError("pair arrays must align")
        if not (np.isfinite(r).all() and np.isfinite(t).all()):
            raise ValueError("correspondence points must be finite")
        m = np.asarray(self.inliers, dtype=bool).reshape(len(r))
        for name, v in (("ref_points", r), ("tgt_points", t), ("inliers", m)):
            v.setflags(write=False)
            object.__setattr__(self, name, v)

    def __len__(self) -> int:
        return len(self.ref_points)

    @staticmethod
    def from_pairs(ref: np.ndarray, tgt: np.ndarray) -> "CorrespondenceSet":
        ref = np.asarray(ref, dtype=float).reshape(-1, 3)
        return CorrespondenceSet(ref, tgt, np.ones(len(ref), dtype=bool))


def _pairwise_feature_dist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aa = (a * a).sum(axis=1)[:, None]
    bb = (b * b).sum(axis=1)[None, :]
    sq = aa + bb - 2.0 * (a @ b.T)
    return np.sqrt(np.maximum(sq, 0.0))


def median_nn_feature_distance(grid: FeatureGrid) -> float:
    """Median nearest-neighbor distance in feature space (self-matches excluded)."""
    d = _pairwise_feature_dist(grid.features, grid.features)
    np.fill_diagonal(d, np.inf)
    return float(np.median(d.min(axis=1)))


def relaxed_best_buddies(ref: FeatureGrid, tgt: FeatureGrid, d_t: float) -> CorrespondenceSet:
    """Mutual-neighborhood correspondences between two feature grids.

    Pair (i, j) qualifies when the target feature j lies within d_t of the
    nearest target neighbor of reference feature i, and symmetrically the
    reference feature i lies within d_t of the nearest reference neighbor of
    target feature j. d_t = 0 recovers strict mutual nearest neighbors.
    """
    if len(ref) == 0 or len(tgt) == 0:
        raise ValueError("both regions must be non-empty")
    if d_t < 0:
        raise ValueError("d_t must be >= 0")
    cross = _pairwise_feature_dist(ref.features, tgt.features)
    nn_tgt_of_ref = np.argmin(cross, axis=1)  # per ref voxel
    nn_ref_of_tgt = np.argmin(cross, axis=0)  # per tgt voxel
    t2t = _pairwise_feature_dist(tgt.features, tgt.features)
    r2r = _pairwise_feature_dist(ref.features, ref.features)
    # cond_a[i, j]: d(F_t[nn_t(i)], F_t[j]) <= d_t; cond_b: symmetric in ref
    cond_a = t2t[nn_tgt_of_ref, :] <= d_t
    cond_b = r2r[:, nn_ref_of_tgt] <= d_t
    ii, jj = np.nonzero(cond_a & cond_b)
    return CorrespondenceSet.from_pairs(ref.centers[ii], tgt.centers[jj])


def kabsch_fit(ref: np.ndarray, tgt: np.ndarray, weights: np.ndarray | None = None) -> Pose:
    """Least-squares rigid transform mapping ref points onto tgt points.

    SVD solution with det(R) = +1 enforced (no reflections). Raises on
    degenerate (collinear / coincident) support.
    """
    ref = np.asarray(ref, dtype=float)
    tgt = np.asarray(tgt, dtype=float)
    if len(ref) < 3:
        raise DegenerateInputError("rigid fit needs at least 3 pairs")
    if weights is None:
        weights = np.ones(len(ref))
    w = np.asarray(weights, dtype=float)
    w = w / w.sum()
    rc = (w[:, None] * ref).sum(axis=0)
    tc = (w[:, None] * tgt).sum(axis=0)
    h = (w[:, None] * (ref - rc)).T @ (tgt - tc)
    u, s, vt = np.linalg.svd(h)
    if s[1] < 1e-12 * max(1.0, s[0]):
        raise DegenerateInputError("correspondences are collinear; rotation underdetermined")
    d = np.sign(np.linalg.det(vt.T @ u.T))
    if d == 0:
        d = 1.0
    r = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    return Pose.from_rotation(r, tc - r @ rc)


def _batched_minimal_fits(ref3: np.ndarray, tgt3: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized 3-point Kabsch over K minimal samples.

    ref3, tgt3: (K, 3, 3). Returns rotations (K, 3, 3), translations (K, 3)
    and a validity mask (degenerate samples flagged False).
    """
    rc = ref3.mean(axis=1, keepdims=True)
    tc = tgt3.mean(axis=1, keepdims=True)
    h = np.einsum("kij,kil->kjl", ref3 - rc, tgt3 - tc)
    u, s, vt = np.linalg.svd(h)
    ok = s[:, 1] > 1e-12 * np.maximum(1.0, s[:, 0])
    det = np.linalg.det(np.einsum("kij,kjl->kil", vt.transpose(0, 2, 1), u.transpose(0, 2, 1)))
    flip = np.where(det < 0, -1.0, 1.0)
    diag = np.zeros((len(ref3), 3, 3))
    diag[:, 0, 0] = 1.0
    diag[:, 1, 1] = 1.0
    diag[:, 2, 2] = flip
    r = np.einsum("kij,kjl,klm->kim", vt.transpose(0, 2, 1), diag, u.transpose(0, 2, 1))
    t = tc[:, 0, :] - np.einsum("kij,kj->ki", r, rc[:, 0, :])
    return r, t, ok


def ransac_rigid_align(
    c: CorrespondenceSet,
    iterations: int = RANSAC_ITERATIONS,
    inlier_eps: float = RANSAC_INLIER_EPS,
    seed: int = 0,
) -> tuple[Pose, np.ndarray]:
    """RANSAC rigid fit over putative correspondences.

    Minimal samples of 3 pairs; the largest consensus set is refit by
    weighted Kabsch until the inlier set stabilizes, so every reported inlier
    has residual <= inlier_eps under the reported transform. Deterministic
    per seed. Returns (transform ref->tgt, inlier mask).
    """
    n = len(c)
    if n < 3:
        raise DegenerateInputError("RANSAC needs at least 3 correspondences")
    rng = np.random.default_rng(seed)
    idx = np.array([rng.choice(n, size=3, replace=False) for _ in range(iterations)])
    r_all, t_all, ok = _batched_minimal_fits(c.ref_points[idx], c.tgt_points[idx])
    # residuals of every pair under every candidate: (K, N)
    mapped = np.einsum("kij,nj->kni", r_all, c.ref_points) + t_all[:, None, :]
    res = np.linalg.norm(mapped - c.tgt_points[None, :, :], axis=2)
    counts = np.where(ok, (res <= inlier_eps).sum(axis=1), -1)
    best = int(np.argmax(counts))  # ties: earliest iteration
    if counts[best] < 3:
        raise DegenerateInputError("no consensus set of size >= 3 found")
    inliers = res[best] <= inlier_eps

    for _ in range(8):
        pose = kabsch_fit(c.ref_points[inliers], c.tgt_points[inliers])
        resid = np.linalg.norm(pose.apply(c.ref_points) - c.tgt_points, axis=1)
        new_inliers = resid <= inlier_eps
        if new_inliers.sum() < 3:
            break
        if (new_inliers == inliers).all():
            inliers = new_inliers
            break
        inliers = new_inliers
    pose = kabsch_fit(c.ref_points[inliers], c.tgt_points[inliers])
    resid = np.linalg.norm(pose.apply(c.ref_points) - c.tgt_points, axis=1)
    inliers = resid <= inlier_eps
    if inliers.sum() < 3:
        raise DegenerateInputError("consensus collapsed during refinement")
    return pose, inliers
