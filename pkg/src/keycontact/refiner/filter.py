"""Particle filter over the in-hand relative-pose error.

The filter state z is the composite gripper-to-slave-keypoint transform: all
perception error (master and slave alike) is folded into it, so a converged z
makes execution relative to the perceived master pose consistent with the
true contact geometry. The state is constant up to process noise; contact
measurements score particles by the signed surface distance of the
hypothesized slave keypoint to the master shape.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ..geometry import Pose, ShapeModel, average_quaternions, quat_from_rotvec, quat_to_rotvec, sdf_query
from ..geometry.pose import quat_multiply, quat_rotate

__all__ = [
    "NoiseConfig",
    "RelativePoseError",
    "ParticleSet",
    "ContactMeasurement",
    "contact_likelihood",
    "filter_init",
    "filter_predict",
    "filter_update",
    "filter_estimate",
    "resample",
    "effective_sample_size",
    "weight_entropy",
    "end_effector_target",
    "DEFAULT_PARTICLES",
]

DEFAULT_PARTICLES = 500


@dataclass(frozen=True)
class NoiseConfig:
    """Noise scales for the filter and probe simulation.

    Process noise uses the per-axis convention: translation components are
    i.i.d. N(0, process_sigma_t) and the rotation perturbation is a rotation
    vector with i.i.d. N(0, process_sigma_r) components, composed on the
    right (local frame). Sigmas of exactly zero are accepted to express the
    noise-free limit.
    """

    process_sigma_t: float = 0.001  # m
    process_sigma_r: float = 0.01  # rad
    prior_sigma_t: float = 0.005  # m, initial spread around the vision estimate
    prior_sigma_r: float = 0.0873  # rad (~5 deg)
    d_th: float = 0.01  # m, contact distance cutoff of the likelihood
    contact_sigma: float = 0.0003  # m, reported-pose noise e^C of the probe

    def __post_init__(self):
        fails = {}
        for name in ("process_sigma_t", "process_sigma_r", "prior_sigma_t",
                     "prior_sigma_r", "contact_sigma"):
            if getattr(self, name) < 0:
                fails[name] = "must be >= 0"
        if self.d_th <= 0:
            fails["d_th"] = "must be > 0"
        if fails:
            from ..errors import ConfigError

            raise ConfigError(fails)


@dataclass(frozen=True)
class RelativePoseError:
    """The filter's latent state: composite in-hand relative-pose error."""

    value: Pose


@dataclass(frozen=True)
class ContactMeasurement:
    """End-effector and master poses recorded when force detection fires."""

    end_effector_pose: Pose  # x_W^G at contact
    master_pose: Pose  # x_W^M (perceived)
    confirmed: bool = True


@dataclass(frozen=True)
class ParticleSet:
    """M pose hypotheses with normalized weights and a step counter."""

    quats: np.ndarray  # (M, 4) scalar-first
    translations: np.ndarray  # (M, 3)
    weights: np.ndarray  # (M,)
    step: int = 0

    def __post_init__(self):
        q = np.asarray(self.quats, dtype=float).reshape(-1, 4)
        t = np.asarray(self.translations, dtype=float).reshape(-1, 3)
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if not (len(q) == len(t) == len(w)):
            raise ValueError("particle arrays must align")
        if len(q) < 2:
            raise ValueError("a particle set needs M >= 2")
        if (w < 0).any():
            raise ValueError("weights must be non-negative")
        s = w.sum()
        if abs(s - 1.0) > 1e-12:
            if s <= 0:
                raise ValueError("weights must sum to a positive value")
            w = w / s
        for name, v in (("quats", q), ("translations", t), ("weights", w)):
            v.setflags(write=False)
            object.__setattr__(self, name, v)

    def __len__(self) -> int:
        return len(self.weights)

    def particle(self, j: int) -> Pose:
        return Pose(self.quats[j], self.translations[j])


def contact_likelihood(d, d_th: float):
    """Piecewise-linear contact likelihood: 1 at d = 0, 0 at |d| >= d_th."""
    d = np.asarray(d, dtype=float)
    out = np.where(np.abs(d) <= d_th, 1.0 - np.abs(d) / d_th, 0.0)
    return float(out) if out.ndim == 0 else out


def _perturb(quats, trans, sigma_t, sigma_r, rng):
    n = len(quats)
    new_t = trans + rng.normal(0.0, sigma_t, size=(n, 3)) if sigma_t > 0 else trans.copy()
    if sigma_r > 0:
        rvs = rng.normal(0.0, sigma_r, size=(n, 3))
        new_q = np.array([quat_multiply(quats[j], quat_from_rotvec(rvs[j])) for j in range(n)])
        new_q /= np.linalg.norm(new_q, axis=1, keepdims=True)
    else:
        new_q = quats.copy()
    return new_q, new_t


def filter_init(initial_in_hand: Pose, noise: NoiseConfig, m: int = DEFAULT_PARTICLES, seed: int = 0) -> ParticleSet:
    """M particles around the vision estimate, uniform weights 1/M."""
    if m < 2:
        raise ValueError("M must be >= 2")
    rng = np.random.default_rng(seed)
    quats = np.tile(initial_in_hand.q, (m, 1))
    trans = np.tile(initial_in_hand.t, (m, 1))
    q, t = _perturb(quats, trans, noise.prior_sigma_t, noise.prior_sigma_r, rng)
    return ParticleSet(q, t, np.full(m, 1.0 / m), step=0)


def filter_predict(ps: ParticleSet, noise: NoiseConfig, seed: int = 0) -> ParticleSet:
    """Process model z_n = z_{n-1} (+) noise; weights unchanged."""
    rng = np.random.default_rng(seed)
    q, t = _perturb(ps.quats, ps.translations, noise.process_sigma_t, noise.process_sigma_r, rng)
    return ParticleSet(q, t, ps.weights, step=ps.step + 1)


def hypothesized_keypoints(ps_quats: np.ndarray, ps_trans: np.ndarray, gripper: Pose) -> np.ndarray:
    """World positions of the slave keypoint under each particle hypothesis."""
    return quat_rotate(gripper.q, ps_trans) + gripper.t


def contact_distances(
    quats: np.ndarray,
    trans: np.ndarray,
    gripper: Pose,
    master: ShapeModel,
    master_pose: Pose,
    slave_contact_points: np.ndarray | None,
) -> np.ndarray:
    """Signed contact distance per particle hypothesis at a gripper pose.

    slave_contact_points are slave surface samples expressed in the slave
    keypoint frame (the keypoint itself is the origin and is always
    included). The distance of a hypothesis is the minimum master SDF over
    its implied slave surface, the same quantity the probe drives to zero at
    contact; with no surface points it degenerates to the keypoint distance.
    """
    g_rot = gripper.rotation_matrix()
    kp_world = quat_rotate(gripper.q, trans) + gripper.t  # (M, 3)
    if slave_contact_points is None or len(slave_contact_points) == 0:
        return sdf_query(master, master_pose, kp_world)
    m = len(quats)
    # per-particle keypoint rotation in world: R_g @ R_zj
    from .collision import _quats_to_matrices

    rot = np.einsum("ij,mjk->mik", g_rot, _quats_to_matrices(quats))
    pts = np.einsum("mik,nk->mni", rot, slave_contact_points) + kp_world[:, None, :]
    d = sdf_query(master, master_pose, pts.reshape(-1, 3)).reshape(m, -1)
    return d.min(axis=1)


def slave_contact_points_in_keypoint_frame(
    slave: ShapeModel, slave_kf, n_samples: int = 64, seed: int = 7
) -> np.ndarray:
    """Slave surface samples re-expressed in the keypoint frame (origin first)."""
    pts, _ = slave.surface_samples(n_samples, seed=seed)
    inv = slave_kf.as_pose().inverse()
    return np.vstack([np.zeros(3), inv.apply(pts)])


def filter_update(
    ps: ParticleSet,
    meas: ContactMeasurement,
    master: ShapeModel,
    slave: ShapeModel | None,
    noise: NoiseConfig,
    slave_kf=None,
    contact_samples: int = 64,
) -> tuple[ParticleSet, bool]:
    """Measurement update; returns (updated set, diverged flag).

    Each particle's distance is the signed surface distance of its
    hypothesized slave placement to the master shape at the measured
    configuration (min master-SDF over slave surface samples when the slave
    shape and keypoint frame are given, else the bare keypoint distance).
    New weights are the normalized likelihoods; carried prior weights fold
    in multiplicatively, which reduces to plain normalized likelihoods
    whenever the prior is uniform, i.e. right after a resample. If every
    weighted likelihood is 0 the update is skipped and the diverged flag
    raised instead of renormalizing zeros.
    """
    if not meas.confirmed:
        raise ValueError("only confirmed contacts may enter the update")
    pts = None
    if slave is not None and slave_kf is not None:
        pts = slave_contact_points_in_keypoint_frame(slave, slave_kf, contact_samples)
    d = contact_distances(
        ps.quats, ps.translations, meas.end_effector_pose, master, meas.master_pose, pts
    )
    lik = contact_likelihood(d, noise.d_th) * ps.weights
    total = lik.sum()
    if total <= 0.0:
        return ps, True
    return ParticleSet(ps.quats, ps.translations, lik / total, step=ps.step), False


def filter_estimate(ps: ParticleSet) -> Pose:
    """Weighted mean: translation sum, eigen-method quaternion average."""
    t = (ps.weights[:, None] * ps.translations).sum(axis=0)
    q = average_quaternions(ps.quats, ps.weights)
    return Pose(q, t)


def effective_sample_size(ps: ParticleSet) -> float:
    return float(1.0 / (ps.weights**2).sum())


def weight_entropy(ps: ParticleSet) -> float:
    """Shannon entropy of the weight distribution (nats); 0 log 0 = 0."""
    w = ps.weights[ps.weights > 0]
    return float(-(w * np.log(w)).sum())


def state_entropy(ps: ParticleSet) -> float:
    """Differential entropy proxy of the particle cloud: 0.5 log det of the
    weighted 6D covariance (translation + rotation vector), jittered for
    rank safety. Unlike the weight entropy this is unaffected by resampling
    resets, so it tracks how concentrated the posterior actually is.
    """
    rvs = np.array([quat_to_rotvec(q) for q in ps.quats])
    x = np.hstack([ps.translations, rvs])
    mean = (ps.weights[:, None] * x).sum(axis=0)
    xc = x - mean
    cov = (ps.weights[:, None, None] * np.einsum("ni,nj->nij", xc, xc)).sum(axis=0)
    cov += 1e-18 * np.eye(6)
    sign, logdet = np.linalg.slogdet(cov)
    return float(0.5 * logdet)


def resample(ps: ParticleSet, seed: int = 0) -> ParticleSet:
    """Systematic resampling, triggered when ESS < M/2; otherwise identity.

    Survivors are drawn proportionally to the weights; the resampled set has
    uniform weights.
    """
    m = len(ps)
    if effective_sample_size(ps) >= m / 2.0:
        return ps
    rng = np.random.default_rng(seed)
    positions = (rng.random() + np.arange(m)) / m
    cum = np.cumsum(ps.weights)
    cum[-1] = 1.0
    idx = np.searchsorted(cum, positions, side="left")
    return ParticleSet(
        ps.quats[idx], ps.translations[idx], np.full(m, 1.0 / m), step=ps.step
    )


def end_effector_target(master_pose: Pose, waypoint: Pose, estimate: Pose) -> Pose:
    """Commanded end-effector pose for a waypoint: x_W^M x_M^P z^-1."""
    return master_pose.compose(waypoint).compose(estimate.inverse())
