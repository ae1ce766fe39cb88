"""The iterative contact-refinement loop: predict, select, probe, update."""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from ..errors import RefinementDivergence
from ..geometry import Pose
from .filter import (
    DEFAULT_PARTICLES,
    NoiseConfig,
    ParticleSet,
    RelativePoseError,
    filter_estimate,
    filter_init,
    filter_predict,
    filter_update,
    resample,
    state_entropy,
    weight_entropy,
)
from .strategy import (
    DEFAULT_DOWNSAMPLE,
    DEFAULT_ELEVATION_MAX,
    DEFAULT_ORIENTATIONS,
    DEFAULT_POSITIONS,
    DEFAULT_SCENARIOS,
    sample_contact_candidates,
    select_contact_strategy,
)

__all__ = ["RefinementConfig", "StepDiagnostics", "RefinementResult", "run_refinement"]


@dataclass(frozen=True)
class RefinementConfig:
    particles: int = DEFAULT_PARTICLES
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    selection: str = "ig"  # "ig" | "random"
    n_positions: int = DEFAULT_POSITIONS
    n_orientations: int = DEFAULT_ORIENTATIONS
    n_scenarios: int = DEFAULT_SCENARIOS
    n_downsample: int = DEFAULT_DOWNSAMPLE
    elevation_max: float = DEFAULT_ELEVATION_MAX
    flat_margin: float = 0.009  # reject contact positions without this much flat tangent room
    seed: int = 0
    divergence_limit: int = 3

    def __post_init__(self):
        from ..errors import ConfigError

        fails = {}
        if self.particles < 2:
            fails["particles"] = "must be >= 2"
        if self.selection not in ("ig", "random"):
            fails["selection"] = "must be 'ig' or 'random'"
        for name in ("n_positions", "n_orientations", "n_scenarios", "n_downsample"):
            if getattr(self, name) < 1:
                fails[name] = "must be >= 1"
        if self.divergence_limit < 1:
            fails["divergence_limit"] = "must be >= 1"
        if fails:
            raise ConfigError(fails)


@dataclass(frozen=True)
class StepDiagnostics:
    step: int
    contact: bool
    entropy: float  # posterior weight entropy after the update
    state_entropy: float  # log-det spread of the particle cloud
    expected_ig: float
    candidate_index: int
    travel: float
    translation_error: float  # vs ground truth (simulation only)
    rotation_error: float
    diverged: bool

    def to_json(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class RefinementResult:
    estimate: RelativePoseError
    steps: tuple[StepDiagnostics, ...]
    final_particles: ParticleSet


def run_refinement(scene, waypoint: Pose, n_contacts: int, config: RefinementConfig) -> RefinementResult:
    """Iteratively refine the in-hand estimate through simulated contacts.

    Runs n_contacts rounds of predict -> strategy selection -> probe ->
    update -> resample on the given scene. n_contacts = 0 returns the
    vision-only estimate untouched. Aborts with RefinementDivergence after
    `divergence_limit` consecutive all-zero-likelihood updates.
    """
    from ..sim.probe import ProbeSimulator

    if n_contacts < 0:
        raise ValueError("n_contacts must be >= 0")
    if n_contacts == 0:
        ps0 = filter_init(scene.z_perceived, config.noise, config.particles, config.seed)
        return RefinementResult(RelativePoseError(scene.z_perceived), (), ps0)

    seeder = np.random.default_rng(config.seed)
    step_seeds = seeder.integers(0, 2**62, size=(n_contacts, 4))

    sim = ProbeSimulator(scene)
    vprobe = sim.virtual_probe()
    ps = filter_init(scene.z_perceived, config.noise, config.particles, config.seed)
    rng_random_sel = np.random.default_rng(config.seed + 1)

    steps: list[StepDiagnostics] = []
    consecutive_zero = 0
    for n in range(1, n_contacts + 1):
        s_pred, s_sel, s_probe, s_res = (int(s) for s in step_seeds[n - 1])
        ps = filter_predict(ps, config.noise, seed=s_pred)
        # fresh candidate set per contact iteration
        candidates = sample_contact_candidates(
            scene.master_shape,
            config.n_positions,
            config.n_orientations,
            seed=s_sel,
            elevation_max=config.elevation_max,
            flat_margin=config.flat_margin,
        )

        if config.selection == "ig":
            sel = select_contact_strategy(
                ps,
                candidates,
                scene.master_shape,
                scene.master_perceived,
                vprobe,
                config.noise,
                slave=scene.slave_shape,
                slave_kf=scene.slave_kf,
                n_scenarios=config.n_scenarios,
                n_downsample=config.n_downsample,
                seed=s_sel,
            )
            strategy, cand_idx, expected_ig = sel.strategy, sel.candidate_index, sel.expected_ig
        else:
            cand_idx = int(rng_random_sel.integers(len(candidates)))
            strategy, expected_ig = candidates[cand_idx], float("nan")

        res = sim.probe(
            strategy,
            z_plan=filter_estimate(ps),
            z_actual=scene.z_true,
            noise=config.noise,
            seed=s_probe,
        )
        diverged = False
        entropy = weight_entropy(ps)
        if res.contact:
            ps_new, diverged = filter_update(
                ps,
                sim.measurement(res),
                scene.master_shape,
                scene.slave_shape,
                config.noise,
                slave_kf=scene.slave_kf,
            )
            if diverged:
                consecutive_zero += 1
            else:
                consecutive_zero = 0
                entropy = weight_entropy(ps_new)
                ps = resample(ps_new, seed=s_res)
        est = filter_estimate(ps)
        t_err = float(np.linalg.norm(est.t - scene.z_true.t))
        r_err = float(est.rotation_angle_to(scene.z_true))
        steps.append(
            StepDiagnostics(
                step=n,
                contact=bool(res.contact),
                entropy=entropy,
                state_entropy=state_entropy(ps),
                expected_ig=float(expected_ig),
                candidate_index=cand_idx,
                travel=float(res.travel),
                translation_error=t_err,
                rotation_error=r_err,
                diverged=diverged,
            )
        )
        if consecutive_zero >= config.divergence_limit:
            raise RefinementDivergence(
                f"{consecutive_zero} consecutive all-zero likelihood updates",
                diagnostics=tuple(steps),
            )

    return RefinementResult(
        estimate=RelativePoseError(filter_estimate(ps)),
        steps=tuple(steps),
        final_particles=ps,
    )
