"""Deterministic synthetic scenes, contact probing and campaign running."""

from .campaign import CampaignConfig, TrialResult, run_campaign, write_campaign_outputs
from .probe import ProbeResult, ProbeSimulator
from .scenes import PROFILES, Scene, SceneNoise, make_peg_hole_scene, profile_polygon

__all__ = [
    "Scene",
    "SceneNoise",
    "PROFILES",
    "make_peg_hole_scene",
    "profile_polygon",
    "ProbeResult",
    "ProbeSimulator",
    "CampaignConfig",
    "TrialResult",
    "run_campaign",
    "write_campaign_outputs",
]
