import numpy as np
import pytest

from keycontact.geometry import (
    Pose,
    PointCloud,
    ShapeModel,
    TriangleMesh,
    box_mesh,
    cloud_min_distance,
    compose,
    icosphere_mesh,
    invert,
    load_obj,
    load_ply,
    load_shape_cached,
    penetration_depth,
    save_obj,
    save_ply,
    sdf_query,
    union_aabb_volume,
)


def random_pose(rng):
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = rng.uniform(0, np.pi)
    return Pose.from_rotvec(angle * axis, rng.uniform(-1, 1, 3))


# --- pose algebra ---------------------------------------------------------

def test_compose_identity_and_inverse():
    rng = np.random.default_rng(0)
    p = random_pose(rng)
    assert compose(p, Pose.identity()).is_close(p)
    r = compose(p, invert(p))
    assert r.translation_distance_to(Pose.identity()) < 1e-9
    assert r.rotation_angle_to(Pose.identity()) < 1e-9


def test_compose_matches_hand_computed_matrix_product():
    # Rz(90deg) with t=(1,0,0), then pure translation (1,0,0):
    # R t_b = (0,1,0), so the product carries translation (1,1,0)
    a = Pose.from_rotvec([0, 0, np.pi / 2], (1, 0, 0))
    b = Pose(t=(1, 0, 0))
    c = compose(a, b)
    expected = np.array(
        [[0, -1, 0, 1], [1, 0, 0, 1], [0, 0, 1, 0], [0, 0, 0, 1]], dtype=float
    )
    assert np.allclose(c.as_matrix(), expected, atol=1e-12)


def test_compose_matches_matrix_product_randomized():
    rng = np.random.default_rng(1)
    for _ in range(50):
        a, b = random_pose(rng), random_pose(rng)
        assert np.allclose(compose(a, b).as_matrix(), a.as_matrix() @ b.as_matrix(), atol=1e-12)


def test_compose_associative():
    rng = np.random.default_rng(2)
    for _ in range(30):
        a, b, c = (random_pose(rng) for _ in range(3))
        left = compose(compose(a, b), c)
        right = compose(a, compose(b, c))
        assert left.translation_distance_to(right) < 1e-9
        assert left.rotation_angle_to(right) < 1e-9


def test_pose_quaternion_stays_unit():
    rng = np.random.default_rng(3)
    p = random_pose(rng)
    for _ in range(200):
        p = compose(p, random_pose(rng))
    assert abs(np.linalg.norm(p.q) - 1.0) < 1e-9


def test_rotation_matrix_proper():
    rng = np.random.default_rng(4)
    for _ in range(20):
        r = random_pose(rng).rotation_matrix()
        assert np.allclose(r.T @ r, np.eye(3), atol=1e-9)
        assert np.linalg.det(r) > 0


# --- point clouds ----------------------------------------------------------

def test_cloud_min_distance_trivial():
    a = PointCloud(np.zeros((1, 3)))
    b = PointCloud(np.array([[0.0, 0.0, 3.0]]))
    assert cloud_min_distance(a, b) == pytest.approx(3.0)
    assert cloud_min_distance(a, a) == 0.0


def test_cloud_min_distance_matches_brute_force():
    rng = np.random.default_rng(5)
    a = PointCloud(rng.normal(size=(50, 3)))
    b = PointCloud(rng.normal(size=(50, 3)) + 2.0)
    brute = np.sqrt(
        ((a.points[:, None, :] - b.points[None, :, :]) ** 2).sum(axis=2).min()
    )
    assert cloud_min_distance(a, b) == pytest.approx(float(brute), abs=1e-12)
    assert cloud_min_distance(a, b) == cloud_min_distance(b, a)


def test_cloud_min_distance_empty_rejected():
    with pytest.raises(ValueError):
        cloud_min_distance(PointCloud(np.zeros((0, 3))), PointCloud(np.zeros((1, 3))))


# --- SDF -------------------------------------------------------------------

@pytest.fixture(scope="module")
def unit_cube():
    return ShapeModel(box_mesh((1, 1, 1)), cell=0.05)


def test_sdf_cube_center_and_face(unit_cube):
    tol = unit_cube.grid.cell_diagonal
    assert sdf_query(unit_cube, Pose.identity(), np.array([0.0, 0.0, 0.0])) == pytest.approx(-0.5, abs=tol)
    assert sdf_query(unit_cube, Pose.identity(), np.array([0.0, 0.0, 1.5])) == pytest.approx(1.0, abs=tol)


def _point_triangle_distance_reference(p, a, b, c):
    """Scalar closest-distance oracle (projection + edge/vertex clamping)."""
    ab, ac, ap = b - a, c - a, p - a
    d1, d2 = ab @ ap, ac @ ap
    if d1 <= 0 and d2 <= 0:
        return np.linalg.norm(p - a)
    bp = p - b
    d3, d4 = ab @ bp, ac @ bp
    if d3 >= 0 and d4 <= d3:
        return np.linalg.norm(p - b)
    cp = p - c
    d5, d6 = ab @ cp, ac @ cp
    if d6 >= 0 and d5 <= d6:
        return np.linalg.norm(p - c)
    vc = d1 * d4 - d3 * d2
    if vc <= 0 and d1 >= 0 and d3 <= 0:
        t = d1 / (d1 - d3)
        return np.linalg.norm(p - (a + t * ab))
    vb = d5 * d2 - d1 * d6
    if vb <= 0 and d2 >= 0 and d6 <= 0:
        t = d2 / (d2 - d6)
        return np.linalg.norm(p - (a + t * ac))
    va = d3 * d6 - d5 * d4
    if va <= 0 and (d4 - d3) >= 0 and (d5 - d6) >= 0:
        t = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        return np.linalg.norm(p - (b + t * (c - b)))
    n = np.cross(ab, ac)
    return abs((ap @ n) / np.linalg.norm(n))


def test_unsigned_distance_matches_point_triangle_oracle():
    # two-triangle open sheet: compare the raw distance kernel to the oracle
    from keycontact.geometry.shape import _point_triangle_distances

    verts = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [1.2, 1.1, 0.4]], dtype=float)
    faces = np.array([[0, 1, 2], [1, 3, 2]])
    mesh = TriangleMesh(verts, faces)
    rng = np.random.default_rng(6)
    pts = rng.uniform(-1, 2, size=(200, 3))
    got = _point_triangle_distances(pts, mesh)
    tri = [verts[f] for f in faces]
    want = [
        min(_point_triangle_distance_reference(p, *t) for t in tri) for p in pts
    ]
    assert np.allclose(got, want, atol=1e-9)


def test_sdf_agrees_with_exact_on_random_points(unit_cube):
    rng = np.random.default_rng(7)
    pts = rng.uniform(-1.0, 1.0, size=(100, 3))

    def exact_cube_sdf(p):
        q = np.abs(p) - 0.5
        outside = np.linalg.norm(np.maximum(q, 0.0))
        inside = min(max(q[0], max(q[1], q[2])), 0.0)
        return outside + inside

    got = sdf_query(unit_cube, Pose.identity(), pts)
    want = np.array([exact_cube_sdf(p) for p in pts])
    assert np.abs(got - want).max() <= unit_cube.grid.cell_diagonal


def test_sdf_sign_changes_once_along_entering_ray(unit_cube):
    # ray from outside through the cube: one - -> + crossing pattern
    ts = np.linspace(-1.2, 1.2, 241)
    pts = np.column_stack([ts, np.full_like(ts, 0.1), np.full_like(ts, -0.05)])
    vals = sdf_query(unit_cube, Pose.identity(), pts)
    signs = np.sign(vals)
    changes = np.nonzero(np.diff(signs) != 0)[0]
    assert len(changes) == 2  # enter and exit exactly once each


def test_sdf_exterior_clamp_monotone(unit_cube):
    # beyond the grid domain the extension keeps growing along the ray
    ds = [sdf_query(unit_cube, Pose.identity(), np.array([0.0, 0.0, z])) for z in (1.0, 2.0, 5.0, 9.0)]
    assert all(b > a for a, b in zip(ds, ds[1:]))


def test_sdf_respects_pose(unit_cube):
    pose = Pose.from_rotvec([0, 0, np.pi / 4], (1, 2, 0.5))
    probe_local = np.array([0.0, 0.0, 0.0])
    probe_world = pose.apply(probe_local)
    assert sdf_query(unit_cube, pose, probe_world) == pytest.approx(
        sdf_query(unit_cube, Pose.identity(), probe_local), abs=1e-9
    )


# --- penetration depth -------------------------------------------------------

def test_penetration_zero_when_apart(unit_cube):
    assert penetration_depth(unit_cube, Pose.identity(), unit_cube, Pose(t=(2, 0, 0))) == 0.0


def test_penetration_overlap_known(unit_cube):
    # 0.1 m overlap along x: sampled max(-sdf) equals the overlap depth
    got = penetration_depth(unit_cube, Pose.identity(), unit_cube, Pose(t=(0.9, 0, 0)))
    assert got == pytest.approx(0.1, abs=0.02)


def dense_penetration_oracle(a, pose_a, b, pose_b, n=20000):
    pa, _ = a.mesh.sample_surface(n, seed=123)
    pb, _ = b.mesh.sample_surface(n, seed=321)
    d_ab = b.sdf_local(pose_b.inverse().apply(pose_a.apply(pa)))
    d_ba = a.sdf_local(pose_a.inverse().apply(pose_b.apply(pb)))
    return max(0.0, max(-d_ab.min(), -d_ba.min()))


def test_penetration_matches_dense_oracle(unit_cube):
    # the max statistic over 2k samples trails the 20k oracle by at most the
    # sampling tolerance, tightest where the deep region is a broad plateau
    for offset, tol in (((0.5, 0, 0), 0.05), ((0.9, 0.2, 0), 0.02), ((0.2, 0.2, 0.2), 0.02)):
        pose_b = Pose(t=offset)
        got = penetration_depth(unit_cube, Pose.identity(), unit_cube, pose_b)
        want = dense_penetration_oracle(unit_cube, Pose.identity(), unit_cube, pose_b)
        assert got == pytest.approx(want, abs=tol)


def test_penetration_coincident_cubes_equals_oracle(unit_cube):
    # exactly coincident surfaces: every sample lies on the other surface, so
    # the sampled max(-sdf) oracle reports ~0 (grid tolerance), not the
    # classical minimum-translation depth
    got = penetration_depth(unit_cube, Pose.identity(), unit_cube, Pose.identity())
    want = dense_penetration_oracle(unit_cube, Pose.identity(), unit_cube, Pose.identity())
    assert got == pytest.approx(want, abs=unit_cube.grid.cell_diagonal)


def test_penetration_iff_surface_distance_positive(unit_cube):
    # separated cubes: depth 0 and surface distance > 0
    pose_b = Pose(t=(1.2, 0, 0))
    assert penetration_depth(unit_cube, Pose.identity(), unit_cube, pose_b) == 0.0
    pa, _ = unit_cube.mesh.sample_surface(2000, seed=9)
    pb, _ = unit_cube.mesh.sample_surface(2000, seed=10)
    d = cloud_min_distance(PointCloud(pa), PointCloud(pose_b.apply(pb)))
    assert d > 0


# --- union AABB volume -------------------------------------------------------

def test_union_volume_trivial(unit_cube):
    assert union_aabb_volume(unit_cube, Pose.identity(), unit_cube, Pose.identity()) == pytest.approx(1.0)
    assert union_aabb_volume(unit_cube, Pose.identity(), unit_cube, Pose(t=(1, 0, 0))) == pytest.approx(2.0)


def test_union_volume_matches_vertex_scan(unit_cube):
    rng = np.random.default_rng(8)
    for _ in range(10):
        pa, pb = random_pose(rng), random_pose(rng)
        va = pa.apply(unit_cube.mesh.vertices)
        vb = pb.apply(unit_cube.mesh.vertices)
        allv = np.vstack([va, vb])
        want = float(np.prod(allv.max(axis=0) - allv.min(axis=0)))
        assert union_aabb_volume(unit_cube, pa, unit_cube, pb) == pytest.approx(want, rel=1e-12)


# --- mesh IO and cache -------------------------------------------------------

def test_obj_roundtrip(tmp_path):
    mesh = icosphere_mesh(0.1, subdivisions=1)
    path = tmp_path / "m.obj"
    save_obj(path, mesh)
    back = load_obj(path)
    assert np.allclose(back.vertices, mesh.vertices, atol=1e-7)
    assert np.array_equal(back.faces, mesh.faces)


@pytest.mark.parametrize("binary", [True, False])
def test_ply_roundtrip(tmp_path, binary):
    mesh = box_mesh((0.2, 0.1, 0.3))
    path = tmp_path / "m.ply"
    save_ply(path, mesh, binary=binary)
    back = load_ply(path)
    assert np.allclose(back.vertices, mesh.vertices, atol=1e-6)
    assert np.array_equal(back.faces, mesh.faces)


def test_sdf_cache_roundtrip(tmp_path):
    mesh = box_mesh((0.2, 0.2, 0.2))
    s1 = load_shape_cached(mesh, 0.02, tmp_path)
    cache_files = list(tmp_path.glob("sdf_*.npz"))
    assert len(cache_files) == 1
    s2 = load_shape_cached(mesh, 0.02, tmp_path)
    assert np.array_equal(s1.grid.values, s2.grid.values)
    # different cell size gets its own entry
    load_shape_cached(mesh, 0.01, tmp_path)
    assert len(list(tmp_path.glob("sdf_*.npz"))) == 2


def test_obb_validation():
    from keycontact.geometry import Obb

    with pytest.raises(ValueError):
        Obb(np.zeros(3), np.array([0.1, 0.0, 0.1]), np.array([1.0, 0, 0, 0]))
    box = Obb(np.zeros(3), np.array([1.0, 2.0, 3.0]), np.array([1.0, 0, 0, 0]))
    assert np.allclose(box.extents, [2, 4, 6])
