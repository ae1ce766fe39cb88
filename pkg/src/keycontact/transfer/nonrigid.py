"""Coherent-point-drift non-rigid registration.

EM over a Gaussian mixture: the E-step soft-assigns fixed points to moving
points, the M-step solves for a smooth displacement field regularized by a
Gaussian-kernel motion-coherence prior. The result is a DeformationMap that
can be evaluated anywhere via kernel interpolation of the control weights.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["CpdConfig", "DeformationMap", "nonrigid_register"]


@dataclass(frozen=True)
class CpdConfig:
    beta: float = 2.0  # kernel bandwidth (normalized coordinates)
    lam: float = 3.0  # motion-coherence regularization weight
    outlier_w: float = 0.1  # uniform-component mixing weight
    max_iterations: int = 150
    tolerance: float = 1e-8


@dataclass(frozen=True)
class DeformationMap:
    """phi(p) = p + nu(p), nu interpolated from control-point weights.

    Control points and weights live in normalized coordinates (shift mu,
    scale s); apply() handles the round trip.
    """

    control_points: np.ndarray  # normalized (N, 3)
    weights: np.ndarray  # (N, 3)
    bandwidth: float  # normalized beta
    mu: np.ndarray
    scale: float
    converged: bool
    final_objective: float

    def _kernel(self, query_norm: np.ndarray) -> np.ndarray:
        d2 = ((query_norm[:, None, :] - self.control_points[None, :, :]) ** 2).sum(axis=2)
        return np.exp(-d2 / (2.0 * self.bandwidth**2))

    def displacement(self, points: np.ndarray) -> np.ndarray:
        """nu at world-frame query points (meters)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        g = self._kernel((pts - self.mu) / self.scale)
        return (g @ self.weights) * self.scale

    def apply(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        out = pts + self.displacement(pts)
        if not np.isfinite(out).all():
            raise ValueError("deformation produced non-finite values")
        return out


def nonrigid_register(
    ref_points: np.ndarray,
    tgt_points: np.ndarray,
    config: CpdConfig = CpdConfig(),
) -> DeformationMap:
    """Fit phi moving ref_points (the GMM centroids) toward tgt_points.

    Stops when the sigma^2 objective change drops below the tolerance or the
    iteration budget runs out; a non-converged fit is still returned, flagged
    via DeformationMap.converged.
    """
    y0 = np.asarray(ref_points, dtype=float).reshape(-1, 3)
    x = np.asarray(tgt_points, dtype=float).reshape(-1, 3)
    n_ref, n_tgt = len(y0), len(x)
    if n_ref < 10 or n_tgt < 10:
        raise ValueError("non-rigid registration needs >= 10 points per cloud")

    # common normalization keeps the kernel bandwidth scale-free
    mu = np.vstack([y0, x]).mean(axis=0)
    scale = float(np.sqrt(((np.vstack([y0, x]) - mu) ** 2).sum(axis=1).mean()))
    if scale < 1e-12:
        scale = 1.0
    y = (y0 - mu) / scale
    xz = (x - mu) / scale

    beta, lam, w = config.beta, config.lam, config.outlier_w
    g = np.exp(-((y[:, None, :] - y[None, :, :]) ** 2).sum(axis=2) / (2.0 * beta**2))

    sigma2 = ((xz[None, :, :] - y[:, None, :]) ** 2).sum() / (3.0 * n_ref * n_tgt)
    warped = y.copy()
    weights = np.zeros_like(y)
    converged = False
    const_uniform = w / max(1e-12, (1.0 - w)) * n_ref / n_tgt

    for _ in range(config.max_iterations):
        d2 = ((xz[None, :, :] - warped[:, None, :]) ** 2).sum(axis=2)  # (N_ref, N_tgt)
        p = np.exp(-d2 / (2.0 * sigma2))
        denom = p.sum(axis=0) + const_uniform * (2.0 * np.pi * sigma2) ** 1.5
        denom = np.where(denom < 1e-300, 1e-300, denom)
        p = p / denom[None, :]

        p1 = p.sum(axis=1)
        pt1 = p.sum(axis=0)
        n_p = p1.sum()
        if n_p < 1e-12:
            break
        px = p @ xz

        a = g * p1[:, None] + lam * sigma2 * np.eye(n_ref)
        weights = np.linalg.solve(a, px - p1[:, None] * y)
        warped = y + g @ weights

        xpx = (pt1 * (xz * xz).sum(axis=1)).sum()
        trpxw = (px * warped).sum()
        wtw = (p1 * (warped * warped).sum(axis=1)).sum()
        sigma2_new = (xpx - 2.0 * trpxw + wtw) / (3.0 * n_p)
        sigma2_new = max(sigma2_new, 1e-14)
        if abs(sigma2_new - sigma2) < config.tolerance:
            sigma2 = sigma2_new
            converged = True
            break
        sigma2 = sigma2_new

    return DeformationMap(
        control_points=y,
        weights=weights,
        bandwidth=beta,
        mu=mu,
        scale=scale,
        converged=converged,
        final_objective=float(sigma2),
    )
