"""Triangle meshes, signed-distance grids and bounding-volume queries.

A ShapeModel couples a watertight triangle mesh with a precomputed uniform
signed-distance grid (negative strictly inside, positive outside). Grids are
read-only after construction, so shapes can be shared freely across threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .pose import Pose, quat_to_matrix

__all__ = [
    "TriangleMesh",
    "SdfGrid",
    "ShapeModel",
    "Obb",
    "sdf_query",
    "penetration_depth",
    "union_aabb_volume",
]

DEFAULT_CELL = 0.002  # 2 mm grid resolution, enough for mm-scale clearances
_CHUNK = 4096


@dataclass(frozen=True)
class TriangleMesh:
    """Vertices (V, 3) in meters and triangle faces (F, 3) as vertex indices."""

    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        f = np.asarray(self.faces, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 3:
            raise ValueError(f"vertices must be (V, 3), got {v.shape}")
        if f.ndim != 2 or f.shape[1] != 3:
            raise ValueError(f"faces must be (F, 3) triangles, got {f.shape}")
        if f.size and (f.min() < 0 or f.max() >= len(v)):
            raise ValueError("face index out of range")
        v.setflags(write=False)
        f.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)

    @property
    def triangles(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return (
            self.vertices[self.faces[:, 0]],
            self.vertices[self.faces[:, 1]],
            self.vertices[self.faces[:, 2]],
        )

    def face_normals(self) -> np.ndarray:
        a, b, c = self.triangles
        n = np.cross(b - a, c - a)
        norms = np.linalg.norm(n, axis=1, keepdims=True)
        norms[norms < 1e-30] = 1.0
        return n / norms

    def face_areas(self) -> np.ndarray:
        a, b, c = self.triangles
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)

    def aabb(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def sample_surface(self, n: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
        """Area-weighted uniform surface samples; returns (points, face indices).

        Faces are drawn proportionally to area, positions uniformly inside
        each drawn face via the sqrt barycentric trick. Deterministic per
        seed.
        """
        rng = np.random.default_rng(seed)
        areas = self.face_areas()
        total = areas.sum()
        if total <= 0:
            raise ValueError("mesh has zero surface area")
        face_idx = rng.choice(len(areas), size=n, p=areas / total)
        r1 = np.sqrt(rng.random(n))
        r2 = rng.random(n)
        a, b, c = self.triangles
        a, b, c = a[face_idx], b[face_idx], c[face_idx]
        pts = (1 - r1)[:, None] * a + (r1 * (1 - r2))[:, None] * b + (r1 * r2)[:, None] * c
        return pts, face_idx


def _point_triangle_distances(points: np.ndarray, mesh: TriangleMesh) -> np.ndarray:
    """Unsigned min distance from each point to the mesh surface.

    Region classification (vertex / edge / face) in the Ericson style, but
    expressed through point-independent precomputation plus matmuls so no
    (N, M, 3) temporaries are materialized.
    """
    a, b, c = mesh.triangles
    ab = b - a
    ac = c - a
    n = np.cross(ab, ac)
    n2 = (n * n).sum(axis=1)
    n2 = np.where(n2 < 1e-30, 1.0, n2)
    len_ab2 = np.maximum((ab * ab).sum(axis=1), 1e-30)
    len_ac2 = np.maximum((ac * ac).sum(axis=1), 1e-30)
    bc = c - b
    len_bc2 = np.maximum((bc * bc).sum(axis=1), 1e-30)

    a_ab = (a * ab).sum(axis=1)
    a_ac = (a * ac).sum(axis=1)
    b_ab = (b * ab).sum(axis=1)
    b_ac = (b * ac).sum(axis=1)
    c_ab = (c * ab).sum(axis=1)
    c_ac = (c * ac).sum(axis=1)
    a_n = (a * n).sum(axis=1)
    a2 = (a * a).sum(axis=1)
    b2 = (b * b).sum(axis=1)
    c2 = (c * c).sum(axis=1)

    out = np.empty(len(points))
    for lo in range(0, len(points), _CHUNK):
        p = points[lo : lo + _CHUNK]
        p2 = (p * p).sum(axis=1)[:, None]
        p_ab = p @ ab.T
        p_ac = p @ ac.T
        d1 = p_ab - a_ab[None, :]
        d2 = p_ac - a_ac[None, :]
        d3 = p_ab - b_ab[None, :]
        d4 = p_ac - b_ac[None, :]
        d5 = p_ab - c_ab[None, :]
        d6 = p_ac - c_ac[None, :]
        ap2 = p2 - 2.0 * (p @ a.T) + a2[None, :]
        bp2 = p2 - 2.0 * (p @ b.T) + b2[None, :]
        cp2 = p2 - 2.0 * (p @ c.T) + c2[None, :]

        va = d3 * d6 - d5 * d4
        vb = d5 * d2 - d1 * d6
        vc = d1 * d4 - d3 * d2

        plane = (p @ n.T - a_n[None, :]) ** 2 / n2[None, :]  # interior fallback

        d_sq = plane
        on_bc = (va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0)
        d_sq = np.where(on_bc, bp2 - (d4 - d3) ** 2 / len_bc2[None, :], d_sq)
        on_ac = (vb <= 0) & (d2 >= 0) & (d6 <= 0)
        d_sq = np.where(on_ac, ap2 - d2**2 / len_ac2[None, :], d_sq)
        on_ab = (vc <= 0) & (d1 >= 0) & (d3 <= 0)
        d_sq = np.where(on_ab, ap2 - d1**2 / len_ab2[None, :], d_sq)
        d_sq = np.where((d6 >= 0) & (d5 <= d6), cp2, d_sq)
        d_sq = np.where((d3 >= 0) & (d4 <= d3), bp2, d_sq)
        d_sq = np.where((d1 <= 0) & (d2 <= 0), ap2, d_sq)

        out[lo : lo + _CHUNK] = np.sqrt(np.maximum(d_sq.min(axis=1), 0.0))
    return out


def _winding_numbers(points: np.ndarray, mesh: TriangleMesh) -> np.ndarray:
    """Generalized winding number per query point (1 inside, 0 outside).

    Uses the solid-angle atan2 form with triple products expanded into
    point-independent per-triangle constants plus matmuls.
    """
    va, vb, vc = mesh.triangles
    bxc = np.cross(vb, vc)
    det_const = (va * bxc).sum(axis=1)
    det_lin = bxc + np.cross(vc, va) + np.cross(va, vb)
    ab = (va * vb).sum(axis=1)
    bc = (vb * vc).sum(axis=1)
    ca = (vc * va).sum(axis=1)
    a2 = (va * va).sum(axis=1)
    b2 = (vb * vb).sum(axis=1)
    c2 = (vc * vc).sum(axis=1)

    out = np.empty(len(points))
    for lo in range(0, len(points), _CHUNK):
        p = points[lo : lo + _CHUNK]
        p2 = (p * p).sum(axis=1)[:, None]
        pa = p @ va.T
        pb = p @ vb.T
        pc = p @ vc.T
        la = np.sqrt(np.maximum(a2[None, :] - 2.0 * pa + p2, 0.0))
        lb = np.sqrt(np.maximum(b2[None, :] - 2.0 * pb + p2, 0.0))
        lc = np.sqrt(np.maximum(c2[None, :] - 2.0 * pc + p2, 0.0))
        dot_ab = ab[None, :] - pa - pb + p2
        dot_bc = bc[None, :] - pb - pc + p2
        dot_ca = ca[None, :] - pc - pa + p2
        num = det_const[None, :] - p @ det_lin.T
        den = la * lb * lc + dot_ab * lc + dot_bc * la + dot_ca * lb
        omega = 2.0 * np.arctan2(num, den)
        out[lo : lo + _CHUNK] = omega.sum(axis=1) / (4.0 * np.pi)
    return out


@dataclass(frozen=True)
class SdfGrid:
    """Uniform signed-distance grid; trilinear interpolation on query."""

    origin: np.ndarray  # world position of grid node (0,0,0)
    cell: float
    values: np.ndarray  # (nx, ny, nz)

    def __post_init__(self):
        o = np.asarray(self.origin, dtype=float).reshape(3)
        v = np.asarray(self.values, dtype=float)
        o.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "origin", o)
        object.__setattr__(self, "values", v)

    @property
    def cell_diagonal(self) -> float:
        return float(self.cell * np.sqrt(3.0))

    def query(self, points: np.ndarray) -> np.ndarray:
        """Trilinearly interpolated signed distance at local-frame points.

        Points outside the grid domain are clamped to the boundary; the
        Euclidean offset from the clamp position is added on top, which keeps
        the exterior extension positive and monotone along outward rays.
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        shape = np.array(self.values.shape)
        g = (pts - self.origin) / self.cell
        g_cl = np.clip(g, 0.0, (shape - 1) - 1e-9)
        outside = np.linalg.norm((g - g_cl) * self.cell, axis=1)
        i = np.floor(g_cl).astype(int)
        i = np.minimum(i, shape - 2)
        f = g_cl - i
        v = self.values
        ix, iy, iz = i[:, 0], i[:, 1], i[:, 2]
        fx, fy, fz = f[:, 0], f[:, 1], f[:, 2]
        c000 = v[ix, iy, iz]
        c100 = v[ix + 1, iy, iz]
        c010 = v[ix, iy + 1, iz]
        c110 = v[ix + 1, iy + 1, iz]
        c001 = v[ix, iy, iz + 1]
        c101 = v[ix + 1, iy, iz + 1]
        c011 = v[ix, iy + 1, iz + 1]
        c111 = v[ix + 1, iy + 1, iz + 1]
        c00 = c000 * (1 - fx) + c100 * fx
        c10 = c010 * (1 - fx) + c110 * fx
        c01 = c001 * (1 - fx) + c101 * fx
        c11 = c011 * (1 - fx) + c111 * fx
        c0 = c00 * (1 - fy) + c10 * fy
        c1 = c01 * (1 - fy) + c11 * fy
        return c0 * (1 - fz) + c1 * fz + outside


class ShapeModel:
    """Mesh + signed-distance grid + axis-aligned bounding box (object frame).

    Construction is the only mutating phase; afterwards instances are
    read-only and safe to share. Surface-sample sets are memoized per
    (count, seed).
    """

    def __init__(self, mesh: TriangleMesh, cell: float = DEFAULT_CELL, padding: int = 4, grid: SdfGrid | None = None):
        if cell <= 0:
            raise ValueError("cell size must be positive")
        self.mesh = mesh
        self.cell = float(cell)
        lo, hi = mesh.aabb()
        self.aabb_min = lo
        self.aabb_max = hi
        if grid is not None:
            self.grid = grid
        else:
            self.grid = self._build_grid(mesh, self.cell, padding)
        self._sample_cache: dict[tuple[int, int], tuple[np.ndarray, np.ndarray]] = {}

    @staticmethod
    def _build_grid(mesh: TriangleMesh, cell: float, padding: int) -> SdfGrid:
        lo, hi = mesh.aabb()
        origin = lo - padding * cell
        top = hi + padding * cell
        shape = np.ceil((top - origin) / cell).astype(int) + 1
        xs = origin[0] + cell * np.arange(shape[0])
        ys = origin[1] + cell * np.arange(shape[1])
        zs = origin[2] + cell * np.arange(shape[2])
        gx, gy, gz = np.meshgrid(xs, ys, zs, indexing="ij")
        pts = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)
        dist = _point_triangle_distances(pts, mesh)
        wn = _winding_numbers(pts, mesh)
        sign = np.where(np.abs(wn) > 0.5, -1.0, 1.0)
        return SdfGrid(origin, cell, (sign * dist).reshape(shape))

    def surface_samples(self, n: int = 2000, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
        key = (n, seed)
        if key not in self._sample_cache:
            self._sample_cache[key] = self.mesh.sample_surface(n, seed)
        return self._sample_cache[key]

    def sdf_local(self, points: np.ndarray) -> np.ndarray:
        return self.grid.query(points)

    def obb(self) -> "Obb":
        """Object-frame box (axis-aligned in the object frame, identity orientation)."""
        center = 0.5 * (self.aabb_min + self.aabb_max)
        half = 0.5 * (self.aabb_max - self.aabb_min)
        return Obb(center, half, np.array([1.0, 0.0, 0.0, 0.0]))


@dataclass(frozen=True)
class Obb:
    """Oriented bounding box: center (m), half-extents (m), unit quaternion."""

    center: np.ndarray
    half_extents: np.ndarray
    orientation: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.center, dtype=float).reshape(3)
        h = np.asarray(self.half_extents, dtype=float).reshape(3)
        q = np.asarray(self.orientation, dtype=float).reshape(4)
        if (h <= 0).any():
            raise ValueError("half extents must be strictly positive")
        n = np.linalg.norm(q)
        if abs(n - 1.0) > 1e-6:
            raise ValueError("orientation quaternion must be unit norm")
        q = q / n
        for name, val in (("center", c), ("half_extents", h), ("orientation", q)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)

    @property
    def extents(self) -> np.ndarray:
        """Full extents (2x half extents)."""
        return 2.0 * self.half_extents

    def world_obb(self, pose: Pose) -> "Obb":
        """This box re-expressed under a world pose of its owner."""
        from .pose import quat_multiply

        return Obb(
            pose.apply(self.center),
            self.half_extents,
            quat_multiply(pose.q, self.orientation),
        )

    def corners(self) -> np.ndarray:
        signs = np.array(
            [[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)],
            dtype=float,
        )
        r = quat_to_matrix(self.orientation)
        return self.center + (signs * self.half_extents) @ r.T


def sdf_query(shape: ShapeModel, pose: Pose, points: np.ndarray) -> np.ndarray:
    """Signed distance (m) from world-frame point(s) to the posed shape.

    Negative inside. Scalar in, scalar out; (N, 3) in, (N,) out.
    """
    pts = np.asarray(points, dtype=float)
    single = pts.ndim == 1
    local = pose.inverse().apply(np.atleast_2d(pts))
    vals = shape.sdf_local(local)
    return float(vals[0]) if single else vals


def penetration_depth(
    a: ShapeModel,
    pose_a: Pose,
    b: ShapeModel,
    pose_b: Pose,
    samples: int = 2000,
    seed: int = 0,
) -> float:
    """Sampled interpenetration depth (m), >= 0.

    Maximum over surface samples of either shape of the negated signed
    distance to the other, clamped at zero. Resolution limited by the sample
    count and the SDF cell diagonal.
    """
    pa, _ = a.surface_samples(samples, seed)
    pb, _ = b.surface_samples(samples, seed)
    a_in_b = b.sdf_local(pose_b.inverse().apply(pose_a.apply(pa)))
    b_in_a = a.sdf_local(pose_a.inverse().apply(pose_b.apply(pb)))
    depth = max(float(-a_in_b.min()), float(-b_in_a.min()))
    return max(0.0, depth)


def union_aabb_volume(a: ShapeModel, pose_a: Pose, b: ShapeModel, pose_b: Pose) -> float:
    """Volume (m^3) of the world axis-aligned box enclosing both posed vertex sets."""
    va = pose_a.apply(a.mesh.vertices)
    vb = pose_b.apply(b.mesh.vertices)
    lo = np.minimum(va.min(axis=0), vb.min(axis=0))
    hi = np.maximum(va.max(axis=0), vb.max(axis=0))
    return float(np.prod(hi - lo))
