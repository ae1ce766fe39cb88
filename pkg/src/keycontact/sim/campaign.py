"""Seeded insertion campaigns: vision-only vs contact-refined, metrics out.

Artifacts are deterministic per configuration + seed list: a CSV with one
row per trial and a JSON summary with per-cell aggregates. Wall time is
reported on the log stream only, never in the artifacts, so reruns stay
byte-identical.
"""

from __future__ import annotations

import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import ConfigError, RefinementDivergence
from ..refiner import NoiseConfig, RefinementConfig, run_refinement
from ..serialize import canonical_json
from .scenes import PROFILES, Scene, SceneNoise, make_peg_hole_scene

__all__ = ["CampaignConfig", "TrialResult", "run_campaign", "write_campaign_outputs"]

_FMT = "{:.10g}"


@dataclass(frozen=True)
class CampaignConfig:
    profiles: tuple[str, ...] = ("round", "hexagon")
    clearance: float = 0.002
    depth: float = 0.006
    noise_grid: tuple[tuple[float, float], ...] = ((0.005, np.deg2rad(5.0)),)
    trials: int = 100  # per (profile, noise) cell
    n_contacts: int = 6
    selection: str = "ig"  # "ig" | "random"
    particles: int = 500
    d_th: float = 0.002
    base_seed: int = 0
    compare_vision_only: bool = True
    flat_margin: float = 0.009

    def validate(self) -> None:
        fails = {}
        for p in self.profiles:
            if p not in PROFILES:
                fails[f"profiles[{p}]"] = f"unknown profile (choose from {PROFILES})"
        if self.clearance < 0:
            fails["clearance"] = "must be >= 0"
        if self.depth <= 0:
            fails["depth"] = "must be > 0"
        if self.trials < 1:
            fails["trials"] = "must be >= 1"
        if self.n_contacts < 0:
            fails["n_contacts"] = "must be >= 0"
        if self.selection not in ("ig", "random"):
            fails["selection"] = "must be 'ig' or 'random'"
        if self.particles < 2:
            fails["particles"] = "must be >= 2"
        if self.d_th <= 0:
            fails["d_th"] = "must be > 0"
        for i, (st, sr) in enumerate(self.noise_grid):
            if st < 0 or sr < 0:
                fails[f"noise_grid[{i}]"] = "sigmas must be >= 0"
        if fails:
            raise ConfigError(fails)

    @staticmethod
    def from_json(d: dict) -> "CampaignConfig":
        kwargs = {}
        for key in (
            "profiles", "clearance", "depth", "trials", "n_contacts", "selection",
            "particles", "d_th", "base_seed", "compare_vision_only", "flat_margin",
        ):
            if key in d:
                kwargs[key] = tuple(d[key]) if key == "profiles" else d[key]
        if "noise_grid" in d:
            kwargs["noise_grid"] = tuple((float(a), float(b)) for a, b in d["noise_grid"])
        cfg = CampaignConfig(**kwargs)
        cfg.validate()
        return cfg


@dataclass(frozen=True)
class TrialResult:
    profile: str
    sigma_t: float
    sigma_r: float
    seed: int
    vision_success: bool
    refined_success: bool
    vision_lateral: float
    refined_lateral: float
    vision_rotation: float
    refined_rotation: float
    contacts_to_1p5mm: int  # first step with translation error < 1.5 mm; -1 if never
    final_translation_error: float
    diverged: bool


def _run_trial(cfg: CampaignConfig, profile: str, sigma_t: float, sigma_r: float, seed: int) -> TrialResult:
    scene = make_peg_hole_scene(
        profile,
        clearance=cfg.clearance,
        depth=cfg.depth,
        seed=seed,
        noise=SceneNoise(in_hand_sigma_t=sigma_t, in_hand_sigma_r=sigma_r),
    )
    v_lat, _, v_rot = scene.final_pose_errors(scene.z_perceived)
    v_ok = scene.insertion_success(scene.z_perceived) if cfg.compare_vision_only else False

    rcfg = RefinementConfig(
        particles=cfg.particles,
        noise=NoiseConfig(d_th=cfg.d_th),
        selection=cfg.selection,
        flat_margin=cfg.flat_margin,
        seed=seed,
    )
    diverged = False
    try:
        res = run_refinement(scene, scene.insertion_waypoint, cfg.n_contacts, rcfg)
        z = res.estimate.value
        steps = res.steps
    except RefinementDivergence as e:
        diverged = True
        z = scene.z_perceived
        steps = e.diagnostics or ()
    r_lat, _, r_rot = scene.final_pose_errors(z)
    r_ok = scene.insertion_success(z)
    reach = next((s.step for s in steps if s.translation_error < 0.0015), -1)
    t_err = steps[-1].translation_error if steps else float(
        np.linalg.norm(scene.z_perceived.t - scene.z_true.t)
    )
    return TrialResult(
        profile=profile,
        sigma_t=sigma_t,
        sigma_r=sigma_r,
        seed=seed,
        vision_success=v_ok,
        refined_success=r_ok,
        vision_lateral=v_lat,
        refined_lateral=r_lat,
        vision_rotation=v_rot,
        refined_rotation=r_rot,
        contacts_to_1p5mm=reach,
        final_translation_error=t_err,
        diverged=diverged,
    )


def run_campaign(cfg: CampaignConfig, seeds=None, log=sys.stderr) -> tuple[list[TrialResult], dict]:
    """Execute all cells; returns (trial rows, summary dict).

    The seed list defaults to base_seed + trial index per cell; passing an
    explicit list pins it. Aggregation is indexed, so results do not depend
    on execution order.
    """
    cfg.validate()
    t0 = time.monotonic()
    rows: list[TrialResult] = []
    for profile in cfg.profiles:
        for sigma_t, sigma_r in cfg.noise_grid:
            cell_seeds = (
                list(seeds) if seeds is not None else [cfg.base_seed + i for i in range(cfg.trials)]
            )
            for seed in cell_seeds[: cfg.trials]:
                rows.append(_run_trial(cfg, profile, sigma_t, sigma_r, int(seed)))
    elapsed = time.monotonic() - t0

    summary: dict = {"cells": []}
    for profile in cfg.profiles:
        for sigma_t, sigma_r in cfg.noise_grid:
            cell = [
                r for r in rows
                if r.profile == profile and r.sigma_t == sigma_t and r.sigma_r == sigma_r
            ]
            lat = np.array([r.refined_lateral for r in cell])
            rot = np.array([r.refined_rotation for r in cell])
            terr = np.array([r.final_translation_error for r in cell])
            reached = [r.contacts_to_1p5mm for r in cell if r.contacts_to_1p5mm > 0]
            summary["cells"].append(
                {
                    "profile": profile,
                    "sigma_t": sigma_t,
                    "sigma_r": sigma_r,
                    "trials": len(cell),
                    "vision_success_rate": float(np.mean([r.vision_success for r in cell])),
                    "refined_success_rate": float(np.mean([r.refined_success for r in cell])),
                    "mean_translation_error": float(terr.mean()),
                    "p95_translation_error": float(np.quantile(terr, 0.95)),
                    "mean_lateral_error": float(lat.mean()),
                    "p95_lateral_error": float(np.quantile(lat, 0.95)),
                    "mean_rotation_error": float(rot.mean()),
                    "p95_rotation_error": float(np.quantile(rot, 0.95)),
                    "mean_contacts_to_1p5mm": float(np.mean(reached)) if reached else -1.0,
                    "diverged": int(np.sum([r.diverged for r in cell])),
                }
            )
    if log is not None:
        print(f"campaign: {len(rows)} trials in {elapsed:.1f}s", file=log)
    return rows, summary


_CSV_COLUMNS = [
    "profile", "sigma_t", "sigma_r", "seed", "vision_success", "refined_success",
    "vision_lateral", "refined_lateral", "vision_rotation", "refined_rotation",
    "contacts_to_1p5mm", "final_translation_error", "diverged",
]


def _csv_cell(v) -> str:
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return _FMT.format(v)
    return str(v)


def write_campaign_outputs(rows: list[TrialResult], summary: dict, csv_path, summary_path) -> None:
    """Deterministic CSV + JSON artifacts (no timing fields)."""
    lines = [",".join(_CSV_COLUMNS)]
    for r in rows:
        lines.append(",".join(_csv_cell(getattr(r, c)) for c in _CSV_COLUMNS))
    Path(csv_path).write_text("\n".join(lines) + "\n")
    Path(summary_path).write_text(canonical_json(summary) + "\n")
