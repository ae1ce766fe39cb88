"""Voxel feature grids, cosine similarity fields, Otsu region extraction."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DegenerateInputError
from ..geometry import PointCloud

__all__ = ["FeatureGrid", "voxelize_cloud", "region_similarity", "otsu_region"]

DEFAULT_VOXEL = 0.005  # 5 mm


@dataclass(frozen=True)
class FeatureGrid:
    """Sparse voxel grid: unique voxel centers (m) with D-dim mean features."""

    centers: np.ndarray
    features: np.ndarray
    cell: float
    owner: str = "object"

    def __post_init__(self):
        c = np.asarray(self.centers, dtype=float)
        f = np.asarray(self.features, dtype=float)
        if c.ndim != 2 or c.shape[1] != 3:
            raise ValueError("centers must be (N, 3)")
        if f.ndim != 2 or f.shape[0] != c.shape[0]:
            raise ValueError("features must be (N, D) aligned with centers")
        # duplicate voxel coordinates would mean the grid was not reduced
        key = np.floor(c / self.cell).astype(np.int64)
        if len(np.unique(key, axis=0)) != len(key):
            raise ValueError("duplicate voxel coordinates")
        c.setflags(write=False)
        f.setflags(write=False)
        object.__setattr__(self, "centers", c)
        object.__setattr__(self, "features", f)

    def __len__(self) -> int:
        return len(self.centers)

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def select(self, mask: np.ndarray) -> "FeatureGrid":
        return FeatureGrid(self.centers[mask], self.features[mask], self.cell, self.owner)

    def feature_at(self, point: np.ndarray) -> np.ndarray:
        """Feature of the voxel nearest to a query point."""
        d = np.linalg.norm(self.centers - np.asarray(point, dtype=float), axis=1)
        return self.features[int(np.argmin(d))]


def voxelize_cloud(cloud: PointCloud, cell: float = DEFAULT_VOXEL, owner: str = "object") -> FeatureGrid:
    """Reduce a featured cloud to a voxel grid; voxel feature = member mean.

    Voxel centers sit at (index + 0.5) * cell; output is sorted by voxel
    index, so the result is independent of input point order.
    """
    if cloud.features is None:
        raise ValueError("voxelize_cloud needs per-point features")
    if len(cloud) == 0:
        raise ValueError("empty cloud")
    idx = np.floor(cloud.points / cell).astype(np.int64)
    uniq, inverse = np.unique(idx, axis=0, return_inverse=True)
    d = cloud.features.shape[1]
    sums = np.zeros((len(uniq), d))
    counts = np.zeros(len(uniq))
    np.add.at(sums, inverse, cloud.features)
    np.add.at(counts, inverse, 1.0)
    feats = sums / counts[:, None]
    centers = (uniq + 0.5) * cell
    return FeatureGrid(centers, feats, cell, owner)


def region_similarity(grid: FeatureGrid, reference_feature: np.ndarray) -> np.ndarray:
    """Cosine similarity of every voxel feature against a reference feature.

    Zero-norm features (either side) yield similarity 0 rather than NaN.
    """
    ref = np.asarray(reference_feature, dtype=float).ravel()
    if ref.shape[0] != grid.feature_dim:
        raise ValueError("reference feature dimensionality mismatch")
    rn = np.linalg.norm(ref)
    norms = np.linalg.norm(grid.features, axis=1)
    denom = norms * rn
    with np.errstate(invalid="ignore", divide="ignore"):
        sim = np.where(denom > 0, grid.features @ ref / np.where(denom > 0, denom, 1.0), 0.0)
    return np.clip(sim, -1.0, 1.0)


def otsu_region(similarities: np.ndarray, bins: int = 256) -> tuple[np.ndarray, float]:
    """Otsu threshold over a histogram of the similarity values.

    Returns (boolean mask of values above the threshold, threshold). The
    threshold maximizes the between-class variance; when several bin edges
    tie (empty valley between modes), the middle of the maximizing range is
    used so the cut lands mid-valley. Constant input has no bimodal structure
    and raises.
    """
    vals = np.asarray(similarities, dtype=float).ravel()
    if len(vals) < 2 or np.ptp(vals) == 0.0:
        raise DegenerateInputError("needs at least two distinct values")
    lo, hi = float(vals.min()), float(vals.max())
    hist, edges = np.histogram(vals, bins=bins, range=(lo, hi))
    p = hist.astype(float) / hist.sum()
    omega0 = np.cumsum(p)[:-1]  # class probability below edge k+1
    centers = 0.5 * (edges[:-1] + edges[1:])
    mu_cum = np.cumsum(p * centers)
    mu_total = mu_cum[-1]
    mu0 = mu_cum[:-1]
    with np.errstate(invalid="ignore", divide="ignore"):
        sigma_b = (mu_total * omega0 - mu0) ** 2 / (omega0 * (1.0 - omega0))
    sigma_b = np.where((omega0 > 0) & (omega0 < 1), sigma_b, -np.inf)
    best = sigma_b.max()
    ties = np.nonzero(sigma_b >= best - 1e-15 * max(1.0, abs(best)))[0]
    k = int(round(0.5 * (ties[0] + ties[-1])))
    threshold = float(edges[k + 1])
    return vals > threshold, threshold
