"""Contact strategy sampling and information-gain-based selection.

A contact strategy is a point on the master surface with a local frame whose
Z axis is the surface normal, plus an approach orientation for the slave
keypoint (azimuth/elevation of its z axis around the inward direction, and a
roll of its x axis). Selection scores each candidate by the expected entropy
of the posterior weight distribution over hypothetical contact scenarios and
keeps the minimizer; the information gain follows as log(N_d) minus that
entropy under a uniform prior over the downsampled subset.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from ..geometry import Pose, ShapeModel, sdf_query
from .filter import (
    NoiseConfig,
    ParticleSet,
    contact_distances,
    contact_likelihood,
    filter_estimate,
    slave_contact_points_in_keypoint_frame,
)

__all__ = [
    "ContactStrategy",
    "StrategySelection",
    "sample_contact_candidates",
    "select_contact_strategy",
    "information_gain",
    "DEFAULT_POSITIONS",
    "DEFAULT_ORIENTATIONS",
    "DEFAULT_SCENARIOS",
    "DEFAULT_DOWNSAMPLE",
    "DEFAULT_ELEVATION_MAX",
]

DEFAULT_POSITIONS = 4
DEFAULT_ORIENTATIONS = 12
DEFAULT_SCENARIOS = 4
DEFAULT_DOWNSAMPLE = 10
DEFAULT_ELEVATION_MAX = np.deg2rad(60.0)


def _tangent_basis(normal: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic orthonormal tangent pair for a unit normal."""
    e = np.zeros(3)
    e[int(np.argmin(np.abs(normal)))] = 1.0
    x = e - np.dot(e, normal) * normal
    x = x / np.linalg.norm(x)
    return x, np.cross(normal, x)


@dataclass(frozen=True)
class ContactStrategy:
    """Where and how to touch the master object (master-frame quantities)."""

    contact_point: np.ndarray  # on the master surface
    z_local: np.ndarray  # surface normal at the contact point
    x_local: np.ndarray  # tangent reference
    azimuth: float
    elevation: float
    roll: float

    def __post_init__(self):
        p = np.asarray(self.contact_point, dtype=float).reshape(3)
        z = np.asarray(self.z_local, dtype=float).reshape(3)
        x = np.asarray(self.x_local, dtype=float).reshape(3)
        if abs(np.linalg.norm(z) - 1.0) > 1e-6:
            raise ValueError("z_local must be unit norm")
        for name, v in (("contact_point", p), ("z_local", z), ("x_local", x)):
            v.setflags(write=False)
            object.__setattr__(self, name, v)

    def approach_direction(self, master_pose: Pose) -> np.ndarray:
        """World unit vector pointing into the surface along the approach."""
        y_local = np.cross(self.z_local, self.x_local)
        d_local = -(
            np.cos(self.elevation) * self.z_local
            + np.sin(self.elevation)
            * (np.cos(self.azimuth) * self.x_local + np.sin(self.azimuth) * y_local)
        )
        return master_pose.apply_direction(d_local / np.linalg.norm(d_local))

    def keypoint_rotation(self, master_pose: Pose) -> np.ndarray:
        """World rotation for the slave keypoint frame: z = approach, x rolled."""
        z = self.approach_direction(master_pose)
        ref = master_pose.apply_direction(self.x_local)
        u = ref - np.dot(ref, z) * z
        if np.linalg.norm(u) < 1e-9:
            ref = master_pose.apply_direction(np.cross(self.z_local, self.x_local))
            u = ref - np.dot(ref, z) * z
        u = u / np.linalg.norm(u)
        x = np.cos(self.roll) * u + np.sin(self.roll) * np.cross(z, u)
        y = np.cross(z, x)
        return np.column_stack([x, y, z])

    def target_point_world(self, master_pose: Pose) -> np.ndarray:
        return master_pose.apply(self.contact_point)


def _flat_patch_mask(master: ShapeModel, points: np.ndarray, normals: np.ndarray,
                     margin: float, tol: float) -> np.ndarray:
    """True where a tangent ring of the given radius still hugs the surface.

    Rejects positions near edges, corners and cavity rims, where flush
    contact with a finite-footprint slave is impossible and the contact
    manifold turns ambiguous.
    """
    if margin <= 0:
        return np.ones(len(points), dtype=bool)
    k = 8
    th = 2.0 * np.pi * np.arange(k) / k
    ring = np.column_stack([np.cos(th), np.sin(th)])
    ok = np.empty(len(points), dtype=bool)
    for i, (p, n) in enumerate(zip(points, normals)):
        u, v = _tangent_basis(n)
        q = p[None, :] + margin * (ring[:, :1] * u[None, :] + ring[:, 1:] * v[None, :])
        ok[i] = bool((np.abs(master.sdf_local(q)) <= tol).all())
    return ok


def sample_contact_candidates(
    master: ShapeModel,
    n_positions: int = DEFAULT_POSITIONS,
    n_orientations: int = DEFAULT_ORIENTATIONS,
    seed: int = 0,
    elevation_max: float = DEFAULT_ELEVATION_MAX,
    flat_margin: float = 0.0,
    flat_tol: float = 3e-4,
) -> list[ContactStrategy]:
    """n_positions x n_orientations strategies, deterministic per seed.

    Positions are area-weighted uniform on the master surface with the face
    normal as the local Z. With flat_margin > 0, positions whose tangent
    neighborhood of that radius leaves the surface (edges, rims) are
    rejection-resampled, so flush contact stays geometrically possible.
    Orientations stratify the approach over rings of elevation up to
    elevation_max: the first is the straight (anti-normal) approach, the
    rest spread over azimuth rings; each orientation carries a sampled roll.
    """
    if n_positions < 1 or n_orientations < 1:
        raise ValueError("need at least one position and one orientation")
    rng = np.random.default_rng(seed)
    points, faces = master.mesh.sample_surface(n_positions, seed=seed)
    normals = master.mesh.face_normals()[faces]
    if flat_margin > 0:
        collected_p, collected_n = [], []
        need = n_positions
        for attempt in range(40):
            mask = _flat_patch_mask(master, points, normals, flat_margin, flat_tol)
            collected_p.extend(points[mask])
            collected_n.extend(normals[mask])
            if len(collected_p) >= need:
                break
            pts, fcs = master.mesh.sample_surface(
                max(need * 2, 8), seed=int(rng.integers(2**62))
            )
            points, normals = pts, master.mesh.face_normals()[fcs]
        if len(collected_p) < need:
            raise ValueError(
                "could not find enough flat contact positions; lower flat_margin"
            )
        points = np.array(collected_p[:need])
        normals = np.array(collected_n[:need])

    out: list[ContactStrategy] = []
    for p, n in zip(points, normals):
        x_loc, _ = _tangent_basis(n)
        angles: list[tuple[float, float]] = [(0.0, 0.0)]
        remaining = n_orientations - 1
        if remaining > 0:
            n_rings = int(np.ceil(remaining / 6))
            base = remaining // n_rings
            extra = remaining - base * n_rings
            counts = [base + (1 if r < extra else 0) for r in range(n_rings)]
            for r, cnt in enumerate(counts, start=1):
                elev = elevation_max * r / n_rings
                phase = rng.uniform(0.0, 2.0 * np.pi)
                for a in range(cnt):
                    angles.append((phase + 2.0 * np.pi * a / cnt, elev))
        for az, elev in angles[:n_orientations]:
            out.append(
                ContactStrategy(
                    contact_point=p,
                    z_local=n,
                    x_local=x_loc,
                    azimuth=float(az % (2.0 * np.pi)),
                    elevation=float(elev),
                    roll=float(rng.uniform(0.0, 2.0 * np.pi)),
                )
            )
    return out


def information_gain(weights: np.ndarray, n_d: int) -> float:
    """IG of a posterior weight vector against the uniform prior over n_d."""
    w = np.asarray(weights, dtype=float)
    w = w[w > 0]
    return float(np.log(n_d) + (w * np.log(w)).sum())


@dataclass(frozen=True)
class StrategySelection:
    strategy: ContactStrategy
    candidate_index: int
    expected_ig: float
    mean_entropies: np.ndarray  # per candidate; NaN marks excluded candidates


# a virtual probe rolls out a contact strategy under a batch of hypothetical
# true in-hand states while the robot plans with z_plan; returns the gripper
# pose at contact per hypothesis, None where the approach never contacts
VirtualProbe = Callable[[ContactStrategy, list[Pose], Pose], list[Optional[Pose]]]


def select_contact_strategy(
    ps: ParticleSet,
    candidates: Sequence[ContactStrategy],
    master: ShapeModel,
    master_pose: Pose,
    virtual_probe: VirtualProbe,
    noise: NoiseConfig,
    slave: ShapeModel | None = None,
    slave_kf=None,
    n_scenarios: int = DEFAULT_SCENARIOS,
    n_downsample: int = DEFAULT_DOWNSAMPLE,
    seed: int = 0,
    contact_samples: int = 64,
) -> StrategySelection:
    """Pick the candidate minimizing the mean posterior weight entropy.

    For each candidate, n_scenarios particles drawn from the current set act
    as hypothetical ground truths; the virtual probe (noise-free) produces
    the contact each would cause, and the entropy of the n_downsample-subset
    posterior under that measurement is averaged. Scenarios without contact
    are skipped; candidates with no valid scenario are excluded. Ties break
    toward the lowest candidate index.
    """
    if not candidates:
        raise ValueError("candidate set is empty")
    m = len(ps)
    n_d = min(n_downsample, m)
    # uniform stride downsampling of the particle set
    d_idx = np.unique(np.linspace(0, m - 1, n_d).round().astype(int))
    n_d = len(d_idx)
    sub_q = ps.quats[d_idx]
    sub_t = ps.translations[d_idx]
    pts = None
    if slave is not None and slave_kf is not None:
        pts = slave_contact_points_in_keypoint_frame(slave, slave_kf, contact_samples)

    rng = np.random.default_rng(seed)
    scen_idx = rng.choice(m, size=(len(candidates), n_scenarios), p=ps.weights)
    z_plan = filter_estimate(ps)

    mean_entropy = np.full(len(candidates), np.nan)
    for k, cand in enumerate(candidates):
        z_truths = [ps.particle(int(j)) for j in scen_idx[k]]
        grippers = virtual_probe(cand, z_truths, z_plan)
        entropies = []
        any_contact = False
        for gripper in grippers:
            if gripper is None:
                # a miss leaves the posterior at the (uniform) prior
                entropies.append(float(np.log(n_d)))
                continue
            any_contact = True
            d = contact_distances(sub_q, sub_t, gripper, master, master_pose, pts)
            lik = contact_likelihood(d, noise.d_th)
            total = lik.sum()
            if total <= 0.0:
                entropies.append(float(np.log(n_d)))  # uninformative scenario
                continue
            w = lik / total
            w = w[w > 0]
            entropies.append(float(-(w * np.log(w)).sum()))
        if any_contact:
            mean_entropy[k] = float(np.mean(entropies))

    if np.isnan(mean_entropy).all():
        raise ValueError("no candidate produced a valid contact scenario")
    best = int(np.nanargmin(mean_entropy))
    return StrategySelection(
        strategy=candidates[best],
        candidate_index=best,
        expected_ig=float(np.log(n_d) - mean_entropy[best]),
        mean_entropies=mean_entropy,
    )
