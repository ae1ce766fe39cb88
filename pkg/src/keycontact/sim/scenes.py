"""Synthetic peg-in-hole scenes with analytic ground truth.

The master is a block with a prismatic cavity; the slave a matching extruded
peg. Object frames: the master's hole mouth center sits at its origin with
the block top at z = 0 and the cavity extending to z = -depth; the peg's
bottom face center is the slave origin with the shaft along +z. Both keypoint
frames sit at those origins with z pointing down (the insertion approach) so
the ground-truth insertion waypoint is a pure z-offset in the master keypoint
frame.

All perception error is expressed in the in-hand estimate: the composite
filter state absorbs master-side error anyway, so the scene default leaves
the master pose exact and perturbs only the gripper-to-keypoint transform.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..geometry import Pose, ShapeModel, TriangleMesh, penetration_depth
from ..geometry.pose import quat_from_rotvec
from ..keypoints import KeypointFrame
from ..refiner.filter import end_effector_target

__all__ = [
    "PROFILES",
    "profile_polygon",
    "offset_polygon",
    "make_peg_hole_scene",
    "Scene",
    "SceneNoise",
]

PROFILES = ("rectangle", "round", "oval", "hexagon", "star", "triangle", "pentagon")

# downward-z keypoint orientation shared by both frames
_KF_ROT = np.array([[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0]])


def _regular_polygon(n: int, radius: float) -> np.ndarray:
    th = 2.0 * np.pi * np.arange(n) / n
    return radius * np.column_stack([np.cos(th), np.sin(th)])


def profile_polygon(profile: str, size: float) -> np.ndarray:
    """CCW cross-section polygon; size is the nominal circumradius (m)."""
    if profile == "rectangle":
        w, h = 0.9 * size, 0.65 * size
        return np.array([[w, -h], [w, h], [-w, h], [-w, -h]], dtype=float)
    if profile == "round":
        return _regular_polygon(48, size)
    if profile == "oval":
        th = 2.0 * np.pi * np.arange(48) / 48
        return np.column_stack([size * np.cos(th), 0.65 * size * np.sin(th)])
    if profile == "hexagon":
        return _regular_polygon(6, size)
    if profile == "star":
        th = 2.0 * np.pi * np.arange(10) / 10 + np.pi / 2
        r = np.where(np.arange(10) % 2 == 0, size, 0.5 * size)
        return np.column_stack([r * np.cos(th), r * np.sin(th)])
    if profile == "triangle":
        return _regular_polygon(3, size)
    if profile == "pentagon":
        return _regular_polygon(5, size)
    raise ValueError(f"unsupported profile {profile!r} (choose from {PROFILES})")


def offset_polygon(poly: np.ndarray, c: float) -> np.ndarray:
    """Miter-offset a CCW polygon outward by c along its edge normals."""
    n = len(poly)
    out = np.empty_like(poly)
    for i in range(n):
        p_prev, p, p_next = poly[i - 1], poly[i], poly[(i + 1) % n]
        e1 = p - p_prev
        e2 = p_next - p
        n1 = np.array([e1[1], -e1[0]]) / np.linalg.norm(e1)
        n2 = np.array([e2[1], -e2[0]]) / np.linalg.norm(e2)
        denom = 1.0 + float(n1 @ n2)
        if abs(denom) < 1e-9:
            raise ValueError("degenerate polygon corner during offsetting")
        out[i] = p + c * (n1 + n2) / denom
    return out


def _angles(poly: np.ndarray) -> np.ndarray:
    return np.mod(np.arctan2(poly[:, 1], poly[:, 0]), 2.0 * np.pi)


def _annulus_triangles(outer: np.ndarray, inner: np.ndarray, n_outer_offset: int):
    """Triangulate the ring between two origin-star-shaped CCW polygons.

    Vertex index convention of the caller: outer ring vertices first (offset
    n_outer_offset), inner ring after them. Produces CCW triangles viewed
    from +z.
    """
    ao = _angles(outer)
    ai = _angles(inner)
    so = np.argsort(ao, kind="stable")
    si = np.argsort(ai, kind="stable")
    no, ni = len(outer), len(inner)

    def unrolled_o(k):  # angle of the k-th advance position on the outer ring
        return ao[so[k % no]] + 2.0 * np.pi * (k // no)

    def unrolled_i(k):
        return ai[si[k % ni]] + 2.0 * np.pi * (k // ni)

    tris = []
    i = j = 0
    while i + j < no + ni:
        curr_o = n_outer_offset + so[i % no]
        curr_i = no + n_outer_offset + si[j % ni]
        advance_outer = i < no and (j >= ni or unrolled_o(i + 1) <= unrolled_i(j + 1))
        if advance_outer:
            tris.append((curr_o, n_outer_offset + so[(i + 1) % no], curr_i))
            i += 1
        else:
            tris.append((curr_o, no + n_outer_offset + si[(j + 1) % ni], curr_i))
            j += 1
    return tris


def _block_with_cavity(
    outer: np.ndarray, inner: np.ndarray, depth: float, floor: float
) -> TriangleMesh:
    """Watertight block: top at z=0, cavity to -depth, base to -(depth+floor)."""
    no, ni = len(outer), len(inner)
    z_top, z_cav, z_bot = 0.0, -depth, -(depth + floor)
    verts = []
    verts += [[x, y, z_top] for x, y in outer]          # 0 .. no-1
    verts += [[x, y, z_top] for x, y in inner]          # no .. no+ni-1
    verts += [[x, y, z_cav] for x, y in inner]          # cavity bottom ring
    verts += [[x, y, z_bot] for x, y in outer]          # outer bottom ring
    inner_c = inner.mean(axis=0)
    outer_c = outer.mean(axis=0)
    verts.append([inner_c[0], inner_c[1], z_cav])       # cavity floor center
    verts.append([outer_c[0], outer_c[1], z_bot])       # base center
    verts = np.array(verts, dtype=float)
    i_inner_top = no
    i_inner_bot = no + ni
    i_outer_bot = no + 2 * ni
    i_cav_c = no + 2 * ni + no
    i_base_c = i_cav_c + 1

    faces = list(_annulus_triangles(outer, inner, 0))
    for i in range(ni):
        j = (i + 1) % ni
        # cavity wall: solid is outside the inner polygon, normals face the axis
        faces.append((i_inner_top + i, i_inner_bot + j, i_inner_bot + i))
        faces.append((i_inner_top + i, i_inner_top + j, i_inner_bot + j))
        # cavity floor, normal +z
        faces.append((i_cav_c, i_inner_bot + i, i_inner_bot + j))
    for i in range(no):
        j = (i + 1) % no
        # outer walls, outward normals
        faces.append((i, i_outer_bot + i, i_outer_bot + j))
        faces.append((i, i_outer_bot + j, j))
        # base, normal -z
        faces.append((i_base_c, i_outer_bot + j, i_outer_bot + i))
    return TriangleMesh(verts, np.array(faces, dtype=np.int64))


@dataclass(frozen=True)
class SceneNoise:
    """Perception-noise scales applied when a scene is generated."""

    in_hand_sigma_t: float = 0.005  # m
    in_hand_sigma_r: float = np.deg2rad(5.0)  # rad
    master_sigma_t: float = 0.0
    master_sigma_r: float = 0.0


@dataclass(frozen=True)
class Scene:
    """Ground truth + perceived state of one insertion setup."""

    profile: str
    clearance: float
    depth: float
    insert_margin: float
    peg_radius: float
    hole_radius: float
    peg_length: float
    master_shape: ShapeModel
    slave_shape: ShapeModel
    master_true: Pose  # master object pose, world
    z_true: Pose  # gripper -> slave keypoint, true
    master_perceived: Pose
    z_perceived: Pose
    master_kf: KeypointFrame
    slave_kf: KeypointFrame
    insertion_waypoint: Pose  # slave kf in the master kf frame at full depth
    noise: SceneNoise
    seed: int
    noise_draw: dict = field(default_factory=dict)  # recorded perturbations

    @property
    def master_kf_world_true(self) -> Pose:
        return self.master_true.compose(self.master_kf.as_pose())

    @property
    def master_kf_world_perceived(self) -> Pose:
        return self.master_perceived.compose(self.master_kf.as_pose())

    def slave_object_pose(self, gripper: Pose, z: Pose) -> Pose:
        """World slave object pose implied by a gripper pose and in-hand state."""
        return gripper.compose(z).compose(self.slave_kf.as_pose().inverse())

    def commanded_final_gripper(self, z_estimate: Pose) -> Pose:
        """Insertion command computed against the perceived master."""
        return end_effector_target(
            self.master_kf_world_perceived, self.insertion_waypoint, z_estimate
        )

    def final_pose_errors(self, z_estimate: Pose) -> tuple[float, float, float]:
        """(lateral, depth, rotation) error of the executed insertion vs truth."""
        g = self.commanded_final_gripper(z_estimate)
        actual_kf = g.compose(self.z_true)
        target_kf = self.master_kf_world_true.compose(self.insertion_waypoint)
        err = target_kf.inverse().compose(actual_kf)
        lateral = float(np.hypot(err.t[0], err.t[1]))
        return lateral, float(abs(err.t[2])), float(err.rotation_angle_to(Pose.identity()))

    def insertion_success(self, z_estimate: Pose, pen_tol: float = 2e-4) -> bool:
        """Success: lateral keypoint error within clearance and no sampled
        interpenetration at the commanded full-depth pose (up to pen_tol)."""
        lateral, _, _ = self.final_pose_errors(z_estimate)
        if lateral > self.clearance:
            return False
        g = self.commanded_final_gripper(z_estimate)
        slave_pose = self.slave_object_pose(g, self.z_true)
        pen = penetration_depth(
            self.master_shape, self.master_true, self.slave_shape, slave_pose
        )
        return pen <= pen_tol


def _noise_pose(rng, sigma_t: float, sigma_r: float) -> Pose:
    t = rng.normal(0.0, sigma_t, 3) if sigma_t > 0 else np.zeros(3)
    if sigma_r > 0:
        q = quat_from_rotvec(rng.normal(0.0, sigma_r, 3))
    else:
        q = np.array([1.0, 0.0, 0.0, 0.0])
    return Pose(q, t)


def make_peg_hole_scene(
    profile: str,
    clearance: float,
    depth: float,
    seed: int,
    noise: SceneNoise = SceneNoise(),
    size: float = 0.005,
    insert_margin: float = 0.002,
    block_margin: float = 0.025,
    floor: float = 0.020,
    grip_extra: float = 0.012,
    cell: float = 0.002,
    world_pose: Pose = Pose.identity(),
) -> Scene:
    """Build a peg + cavity-block scene with recorded perception noise.

    The hole cross-section is the peg profile offset outward by the clearance
    (round profiles scale the vertex radius exactly, so hole radius equals
    peg radius + clearance by construction).
    """
    if clearance < 0:
        raise ValueError("clearance must be >= 0")
    if depth <= 0:
        raise ValueError("depth must be positive")
    if insert_margin >= depth:
        raise ValueError("insert_margin must be smaller than depth")
    peg_length = depth + grip_extra
    master_shape, slave_shape = _shapes_cached(
        profile, clearance, depth, size, block_margin, floor, peg_length, cell
    )

    master_kf = KeypointFrame(
        np.zeros(3), _KF_ROT[:, 0], _KF_ROT[:, 1], _KF_ROT[:, 2], owner="hole_block", role="master"
    )
    slave_kf = KeypointFrame(
        np.zeros(3), _KF_ROT[:, 0], _KF_ROT[:, 1], _KF_ROT[:, 2], owner="peg", role="slave"
    )

    z_true = Pose.from_rotation(_KF_ROT, (0.0, 0.0, -peg_length))

    rng = np.random.default_rng(seed)
    m_noise = _noise_pose(rng, noise.master_sigma_t, noise.master_sigma_r)
    z_noise = _noise_pose(rng, noise.in_hand_sigma_t, noise.in_hand_sigma_r)

    return Scene(
        profile=profile,
        clearance=float(clearance),
        depth=float(depth),
        insert_margin=float(insert_margin),
        peg_radius=float(size),
        hole_radius=float(size + clearance),
        peg_length=float(peg_length),
        master_shape=master_shape,
        slave_shape=slave_shape,
        master_true=world_pose,
        z_true=z_true,
        master_perceived=world_pose.compose(m_noise),
        z_perceived=z_true.compose(z_noise),
        master_kf=master_kf,
        slave_kf=slave_kf,
        insertion_waypoint=Pose(t=(0.0, 0.0, depth - insert_margin)),
        noise=noise,
        seed=int(seed),
        noise_draw={
            "master": {"q": m_noise.q.tolist(), "t": m_noise.t.tolist()},
            "in_hand": {"q": z_noise.q.tolist(), "t": z_noise.t.tolist()},
        },
    )


def _polygon_area(poly: np.ndarray) -> float:
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


# scene geometry is identical across trials that differ only in noise draws,
# so built shape models are memoized per parameter tuple
_SHAPE_CACHE: dict[tuple, tuple[ShapeModel, ShapeModel]] = {}


def _shapes_cached(profile, clearance, depth, size, block_margin, floor, peg_length, cell):
    key = (profile, round(clearance, 9), round(depth, 9), round(size, 9),
           round(block_margin, 9), round(floor, 9), round(peg_length, 9), round(cell, 9))
    if key not in _SHAPE_CACHE:
        from ..geometry.primitives import prism_mesh

        peg_poly = profile_polygon(profile, size)
        if profile == "round":
            hole_poly = _regular_polygon(48, size + clearance)
        else:
            hole_poly = offset_polygon(peg_poly, clearance)
        peg_mesh = prism_mesh(peg_poly, 0.0, peg_length)
        half = float(np.abs(hole_poly).max()) + block_margin
        outer = np.array([[half, -half], [half, half], [-half, half], [-half, -half]])
        block_mesh = _block_with_cavity(outer, hole_poly, depth, floor)
        _SHAPE_CACHE[key] = (ShapeModel(block_mesh, cell=cell), ShapeModel(peg_mesh, cell=cell))
    return _SHAPE_CACHE[key]
