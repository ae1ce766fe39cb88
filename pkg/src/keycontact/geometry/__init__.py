"""Core spatial types and queries shared by every other module."""

from .cloud import PointCloud, cloud_min_distance
from .meshio import (
    load_featured_cloud,
    load_obj,
    load_ply,
    load_shape_cached,
    mesh_hash,
    save_featured_cloud,
    save_obj,
    save_ply,
)
from .pose import (
    Pose,
    average_quaternions,
    compose,
    invert,
    quat_from_rotvec,
    quat_to_matrix,
    quat_to_rotvec,
    rotation_angle_between,
)
from .primitives import box_mesh, icosphere_mesh, prism_mesh
from .shape import (
    DEFAULT_CELL,
    Obb,
    SdfGrid,
    ShapeModel,
    TriangleMesh,
    penetration_depth,
    sdf_query,
    union_aabb_volume,
)

__all__ = [
    "Pose",
    "compose",
    "invert",
    "average_quaternions",
    "quat_from_rotvec",
    "quat_to_rotvec",
    "quat_to_matrix",
    "rotation_angle_between",
    "PointCloud",
    "cloud_min_distance",
    "TriangleMesh",
    "SdfGrid",
    "ShapeModel",
    "Obb",
    "DEFAULT_CELL",
    "sdf_query",
    "penetration_depth",
    "union_aabb_volume",
    "box_mesh",
    "prism_mesh",
    "icosphere_mesh",
    "load_obj",
    "save_obj",
    "load_ply",
    "save_ply",
    "load_featured_cloud",
    "save_featured_cloud",
    "mesh_hash",
    "load_shape_cached",
]
