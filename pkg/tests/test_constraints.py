import numpy as np
import pytest

from keycontact.constraints import (
    GraspRegion,
    SemanticConstraint,
    TrajectorySpec,
    build_grasp_region,
    evaluate_expression,
    generate_waypoints,
    group_grasps_fallback,
    register_generator,
    sample_grasp_candidates,
)
from keycontact.errors import UnresolvedParameterError
from keycontact.geometry import Obb, Pose
from keycontact.keypoints import KeypointFrame


def frame_at(rng=None, origin=(0, 0, 0), rotvec=(0, 0, 0)):
    return KeypointFrame.from_pose(
        Pose.from_rotvec(np.asarray(rotvec, float), origin), owner="obj", role="master"
    )


ANCHOR = Obb(np.zeros(3), np.array([0.1, 0.15, 0.025]), np.array([1.0, 0, 0, 0]))


# --- grasp regions -------------------------------------------------------------

def test_single_frame_zero_width_region():
    f = frame_at(origin=(0.01, 0.02, 0.03), rotvec=(0.1, 0, 0))
    region = build_grasp_region([f], ANCHOR)
    assert np.allclose(region.position_min, region.position_max)
    assert np.allclose(region.position_min, f.origin)
    assert np.allclose(region.angular_limits, 0, atol=1e-9)
    assert region.contains(f)


def test_two_frames_x_bounds():
    f1 = frame_at(origin=(0.01, 0, 0))
    f2 = frame_at(origin=(0.03, 0, 0))
    region = build_grasp_region([f1, f2], ANCHOR)
    assert region.position_min[0] == pytest.approx(0.01)
    assert region.position_max[0] == pytest.approx(0.03)
    assert np.allclose(region.position_min[1:], 0)
    assert np.allclose(region.position_max[1:], 0)


def test_region_contains_every_member():
    rng = np.random.default_rng(0)
    frames = [
        frame_at(origin=rng.uniform(-0.05, 0.05, 3), rotvec=rng.uniform(-0.4, 0.4, 3))
        for _ in range(10)
    ]
    region = build_grasp_region(frames, ANCHOR)
    for f in frames:
        assert region.contains(f, pos_tol=1e-9, ang_tol=1e-9)


def test_region_json_roundtrip():
    rng = np.random.default_rng(1)
    frames = [frame_at(origin=rng.uniform(-0.02, 0.02, 3)) for _ in range(4)]
    region = build_grasp_region(frames, ANCHOR, group_label="g0")
    back = GraspRegion.from_json(region.to_json())
    assert np.allclose(back.position_min, region.position_min)
    assert np.allclose(back.mean_rotation, region.mean_rotation)
    assert back.group_label == "g0"


# --- fallback grouping ----------------------------------------------------------

def connected_components_oracle(frames, pos_eps, ang_eps):
    n = len(frames)
    quats = [f.as_pose().q for f in frames]
    adj = np.zeros((n, n), dtype=bool)
    for i in range(n):
        for j in range(n):
            dp = np.linalg.norm(frames[i].origin - frames[j].origin)
            da = 2 * np.arccos(min(1.0, abs(float(np.dot(quats[i], quats[j])))))
            adj[i, j] = max(dp / pos_eps, da / ang_eps) <= 1
    seen, comps = set(), []
    for i in range(n):
        if i in seen:
            continue
        stack, comp = [i], []
        while stack:
            k = stack.pop()
            if k in seen:
                continue
            seen.add(k)
            comp.append(k)
            stack.extend(j for j in range(n) if adj[k, j] and j not in seen)
        comps.append(sorted(comp))
    return sorted(comps)


def test_grouping_identical_frames_one_group():
    frames = [frame_at(origin=(0.01, 0, 0))] * 5
    groups = group_grasps_fallback(frames, 0.02, 0.1)
    assert len(groups) == 1 and len(groups[0]) == 5


def test_grouping_two_position_clusters():
    rng = np.random.default_rng(2)
    a = [frame_at(origin=rng.normal(scale=0.003, size=3)) for _ in range(5)]
    b = [frame_at(origin=np.array([0.1, 0, 0]) + rng.normal(scale=0.003, size=3)) for _ in range(5)]
    frames = a + b
    groups = group_grasps_fallback(frames, 0.02, 0.5)
    assert len(groups) == 2
    want = connected_components_oracle(frames, 0.02, 0.5)
    ident = [id(f) for f in frames]
    got = sorted(sorted(ident.index(id(f)) for f in g) for g in groups)
    assert got == want


def test_grouping_rotation_split():
    f0 = frame_at(origin=(0.01, 0.01, 0.0), rotvec=(0, 0, 0))
    f90 = frame_at(origin=(0.01, 0.01, 0.0), rotvec=(0, 0, np.pi / 2))
    groups = group_grasps_fallback([f0, f90, f0], 0.02, np.deg2rad(10))
    assert len(groups) == 2
    assert len(groups[0]) == 2  # the two aligned frames group together


def test_grouping_matches_oracle_random():
    rng = np.random.default_rng(3)
    for _ in range(20):
        frames = [
            frame_at(origin=rng.uniform(-0.05, 0.05, 3), rotvec=rng.uniform(-0.5, 0.5, 3))
            for _ in range(rng.integers(2, 12))
        ]
        pos_eps, ang_eps = rng.uniform(0.01, 0.05), rng.uniform(0.1, 0.6)
        groups = group_grasps_fallback(frames, pos_eps, ang_eps)
        ident = [id(f) for f in frames]
        got = sorted(sorted(ident.index(id(f)) for f in g) for g in groups)
        assert got == connected_components_oracle(frames, pos_eps, ang_eps)


# --- candidate sampling -----------------------------------------------------------

def test_sampling_zero_width_region_repeats_frame():
    f = frame_at(origin=(0.01, 0.02, 0.03), rotvec=(0.2, -0.1, 0.3))
    region = build_grasp_region([f], ANCHOR)
    samples = sample_grasp_candidates(region, 5, seed=0)
    for s in samples:
        assert np.allclose(s.origin, f.origin, atol=1e-12)
        assert s.as_pose().rotation_angle_to(f.as_pose()) < 1e-9


def test_sampling_containment_mass():
    rng = np.random.default_rng(4)
    frames = [
        frame_at(origin=rng.uniform(-0.03, 0.03, 3), rotvec=rng.uniform(-0.3, 0.3, 3))
        for _ in range(8)
    ]
    region = build_grasp_region(frames, ANCHOR)
    samples = sample_grasp_candidates(region, 10_000, seed=1)
    for s in samples:
        assert region.contains(s, pos_tol=1e-9, ang_tol=1e-6)


def test_sampling_deterministic_per_seed():
    f1, f2 = frame_at(origin=(0, 0, 0)), frame_at(origin=(0.02, 0.01, 0.0), rotvec=(0.1, 0, 0))
    region = build_grasp_region([f1, f2], ANCHOR)
    a = sample_grasp_candidates(region, 20, seed=7)
    b = sample_grasp_candidates(region, 20, seed=7)
    c = sample_grasp_candidates(region, 20, seed=8)
    assert all(x.as_pose().is_close(y.as_pose(), 0, 0) for x, y in zip(a, b))
    assert any(not x.as_pose().is_close(y.as_pose(), 1e-12, 1e-12) for x, y in zip(a, c))


# --- expression language -----------------------------------------------------------

def test_expression_literals_and_fields():
    assert evaluate_expression("0.5", ANCHOR) == 0.5
    assert evaluate_expression("x_extent", ANCHOR) == pytest.approx(0.2)
    assert evaluate_expression("obb.y_extent", ANCHOR) == pytest.approx(0.3)
    assert evaluate_expression("min(x_extent, y_extent) * 0.5", ANCHOR) == pytest.approx(0.1)
    assert evaluate_expression("max(x_extent, y_extent) - 0.1", ANCHOR) == pytest.approx(0.2)
    assert evaluate_expression("-(z_extent / 2) + 1", ANCHOR) == pytest.approx(0.975)


def test_expression_unknown_identifier():
    with pytest.raises(UnresolvedParameterError) as ei:
        evaluate_expression("width * 2", ANCHOR)
    assert "width" in str(ei.value)


# --- generators -------------------------------------------------------------------

def test_line_two_points():
    spec = TrajectorySpec(
        "line",
        {"start_x": 0, "start_y": 0, "start_z": 0, "end_x": 0, "end_y": 0, "end_z": 0.1},
        resolution=2,
    )
    path = generate_waypoints(spec, ANCHOR)
    assert len(path) == 2
    assert np.allclose(path.positions(), [[0, 0, 0], [0, 0, 0.1]])


def test_arc_full_circle_closes():
    spec = TrajectorySpec(
        "arc",
        {
            "center_x": 0, "center_y": 0, "center_z": 0.02,
            "radius": 0.05, "angle_start": 0, "angle_end": 2 * np.pi,
        },
        resolution=33,
    )
    path = generate_waypoints(spec, ANCHOR)
    assert np.allclose(path.positions()[0], path.positions()[-1], atol=1e-9)


def test_spiral_bound_to_obb():
    # r_end = 0.5 * min extent of a 0.2 x 0.3 x 0.05 box -> 0.1 max radius
    spec = TrajectorySpec(
        "spiral",
        {
            "center_x": 0, "center_y": 0, "center_z": 0,
            "r_start": 0.0, "r_end": "0.5 * min(x_extent, y_extent)",
            "turns": 3, "pitch": 0,
        },
        resolution=200,
    )
    path = generate_waypoints(spec, ANCHOR)
    radii = np.linalg.norm(path.positions()[:, :2], axis=1)
    assert radii.max() == pytest.approx(0.1, abs=1e-9)
    # closed-form check at every sample
    th = np.linspace(0, 2 * np.pi * 3, 200)
    r = np.linspace(0, 0.1, 200)
    want = np.column_stack([r * np.cos(th), r * np.sin(th), np.zeros_like(th)])
    assert np.allclose(path.positions(), want, atol=1e-9)


def test_spiral_scale_covariance():
    spec = TrajectorySpec(
        "spiral",
        {
            "center_x": 0, "center_y": 0, "center_z": 0,
            "r_start": "0.1 * x_extent", "r_end": "0.5 * min(x_extent, y_extent)",
            "turns": 2, "pitch": 0,
        },
        resolution=50,
    )
    small = generate_waypoints(spec, ANCHOR)
    double = Obb(ANCHOR.center, 2 * ANCHOR.half_extents, ANCHOR.orientation)
    big = generate_waypoints(spec, double)
    assert np.allclose(big.positions(), 2 * small.positions(), atol=1e-12)


def test_composite_concatenates():
    line = TrajectorySpec(
        "line",
        {"start_x": 0, "start_y": 0, "start_z": 0.05, "end_x": 0, "end_y": 0, "end_z": 0},
        resolution=3,
    )
    arc = TrajectorySpec(
        "arc",
        {
            "center_x": 0, "center_y": 0, "center_z": 0,
            "radius": 0.02, "angle_start": 0, "angle_end": np.pi,
        },
        resolution=4,
    )
    comp = TrajectorySpec("composite", children=(line, arc))
    path = generate_waypoints(comp, ANCHOR)
    assert len(path) == 7


def test_missing_parameter_names_it():
    spec = TrajectorySpec("line", {"start_x": 0}, resolution=2)
    with pytest.raises(UnresolvedParameterError) as ei:
        generate_waypoints(spec, ANCHOR)
    assert ei.value.parameter == "start_y"


def test_generator_registry():
    def zigzag(spec, obb):
        n = spec.resolution
        return np.column_stack([np.arange(n) * 0.01, (np.arange(n) % 2) * 0.01, np.zeros(n)])

    register_generator("zigzag", zigzag)
    try:
        path = generate_waypoints(TrajectorySpec("zigzag", resolution=4), ANCHOR)
        assert len(path) == 4
        with pytest.raises(ValueError):
            register_generator("zigzag", zigzag)
    finally:
        from keycontact.constraints import _GENERATORS

        _GENERATORS.pop("zigzag", None)


def test_trajectory_spec_json_roundtrip():
    spec = TrajectorySpec(
        "spiral",
        {
            "center_x": 0, "center_y": 0, "center_z": 0,
            "r_start": 0.0, "r_end": "0.5 * min(x_extent, y_extent)",
            "turns": 3, "pitch": 0.001,
        },
        resolution=64,
    )
    back = TrajectorySpec.from_json(spec.to_json())
    assert back == spec


def test_semantic_constraint_roundtrip_and_validation():
    c = SemanticConstraint("keep brush above pan", "avoid handle", "external_reasoner")
    assert SemanticConstraint.from_json(c.to_json()) == c
    with pytest.raises(ValueError):
        SemanticConstraint("", source="fallback_grouping")
