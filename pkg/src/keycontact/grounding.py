"""Interaction grounding: contact markers, segment filtering, hand-to-gripper poses.

Works over time-series of posed point clouds. Upstream perception (video
decoding, tracking, mask generation) is out of scope; trajectories arrive as
files (see `load_trajectories`).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import DegenerateInputError, MisalignedTimebaseError
from .geometry import PointCloud, Pose, cloud_min_distance
from .geometry.meshio import load_featured_cloud
from . import serialize

__all__ = [
    "TrackedEntity",
    "Segment",
    "HandLandmarks",
    "contact_markers",
    "filter_segments",
    "gripper_from_hand",
    "load_trajectories",
    "label_phase",
]

HAND_ID = "hand"


@dataclass(frozen=True)
class TrackedEntity:
    """Time-indexed clouds and poses of one tracked object (or the hand)."""

    id: str
    clouds: tuple[PointCloud, ...]
    poses: tuple[Pose, ...]
    timestamps: np.ndarray

    def __post_init__(self):
        ts = np.asarray(self.timestamps, dtype=float)
        if not (len(self.clouds) == len(self.poses) == len(ts)):
            raise ValueError("clouds, poses and timestamps must be equal length")
        if len(ts) < 2:
            raise ValueError("a trajectory needs at least 2 samples")
        if not (np.diff(ts) > 0).all():
            raise ValueError("timestamps must be strictly increasing")
        ts.setflags(write=False)
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "clouds", tuple(self.clouds))
        object.__setattr__(self, "poses", tuple(self.poses))

    def __len__(self) -> int:
        return len(self.timestamps)


@dataclass(frozen=True)
class Segment:
    """A contact-delimited subtask: [t_b, t_e] frame indices plus entity roles."""

    t_b: int
    t_e: int
    master_id: str
    slave_id: str
    phase: str  # "grasping" | "manipulation"

    def __post_init__(self):
        if not self.t_b < self.t_e:
            raise ValueError("segment must satisfy t_b < t_e")
        if self.phase not in ("grasping", "manipulation"):
            raise ValueError(f"unknown phase {self.phase!r}")


@dataclass(frozen=True)
class HandLandmarks:
    """Ordered base-to-tip 3D landmarks for the thumb and index finger."""

    thumb_points: np.ndarray
    index_points: np.ndarray

    def __post_init__(self):
        tp = np.asarray(self.thumb_points, dtype=float).reshape(-1, 3)
        ip = np.asarray(self.index_points, dtype=float).reshape(-1, 3)
        if len(tp) < 2 or len(ip) < 2:
            raise ValueError("need at least two points per finger")
        if np.linalg.norm(tp[-1] - ip[-1]) <= 1e-6:
            raise ValueError("finger tips must be distinct")
        tp.setflags(write=False)
        ip.setflags(write=False)
        object.__setattr__(self, "thumb_points", tp)
        object.__setattr__(self, "index_points", ip)

    @property
    def thumb_tip(self) -> np.ndarray:
        return self.thumb_points[-1]

    @property
    def index_tip(self) -> np.ndarray:
        return self.index_points[-1]


def _check_aligned(a: TrackedEntity, b: TrackedEntity) -> None:
    if len(a) != len(b) or not np.allclose(a.timestamps, b.timestamps, atol=1e-9):
        raise MisalignedTimebaseError(
            f"entities {a.id!r} and {b.id!r} are on different time bases"
        )


def contact_markers(
    a: TrackedEntity, b: TrackedEntity, epsilon: float = 0.02
) -> list[tuple[int, int]]:
    """Paired contact onset / release indices from the min cloud distance series.

    Onset t_b: d[t-1] > eps and d[t] < eps. Release t_e: d[t-1] < eps and
    d[t] > eps. Crossings are strict; a sample equal to eps is no crossing.
    A contact still open at the end of the series closes at the last index.
    A series that starts already in contact has no onset crossing and is not
    reported.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    _check_aligned(a, b)
    d = np.array(
        [cloud_min_distance(ca, cb) for ca, cb in zip(a.clouds, b.clouds)]
    )
    markers: list[tuple[int, int]] = []
    open_tb: Optional[int] = None
    for t in range(1, len(d)):
        if open_tb is None and d[t - 1] > epsilon and d[t] < epsilon:
            open_tb = t
        elif open_tb is not None and d[t - 1] < epsilon and d[t] > epsilon:
            markers.append((open_tb, t))
            open_tb = None
    if open_tb is not None:
        markers.append((open_tb, len(d) - 1))
    return markers


def hand_path_length(hand: TrackedEntity, t_b: int, t_e: int) -> float:
    """Sum of hand-centroid step norms over [t_b, t_e]."""
    cents = np.array([hand.clouds[t].centroid() for t in range(t_b, t_e + 1)])
    if len(cents) < 2:
        return 0.0
    return float(np.linalg.norm(np.diff(cents, axis=0), axis=1).sum())


def filter_segments(
    segments: Sequence[Segment], hand: TrackedEntity, gamma: float = 0.05
) -> list[Segment]:
    """Drop segments whose hand path length over [t_b, t_e] falls below gamma."""
    return [s for s in segments if hand_path_length(hand, s.t_b, s.t_e) >= gamma]


def label_phase(master_id: str, slave_id: str, hand_id: str = HAND_ID) -> str:
    """Deterministic phase rule: a segment is grasping iff the slave is the hand."""
    return "grasping" if slave_id == hand_id else "manipulation"


def gripper_from_hand(h: HandLandmarks) -> Pose:
    """Parallel-gripper pose from thumb + index landmarks.

    Translation is the midpoint of the two finger tips. X is the unit normal
    of the least-squares plane through all landmarks, sign-fixed so that
    X . ((thumb_tip - thumb_base) x (index_tip - grasp_point)) >= 0. Y points
    from the grasp point toward the index tip, projected orthogonal to X.
    Z = X x Y.
    """
    pts = np.vstack([h.thumb_points, h.index_points])
    grasp = 0.5 * (h.thumb_tip + h.index_tip)
    centered = pts - pts.mean(axis=0)
    _, svals, vt = np.linalg.svd(centered, full_matrices=True)
    if len(svals) < 3 or svals[1] < 1e-9:
        raise DegenerateInputError("landmarks are collinear; plane normal undefined")
    x_axis = vt[2]
    ref = np.cross(h.thumb_tip - h.thumb_points[0], h.index_tip - grasp)
    if float(np.dot(x_axis, ref)) < 0.0:
        x_axis = -x_axis
    y_raw = h.index_tip - grasp
    y_axis = y_raw - np.dot(y_raw, x_axis) * x_axis
    ny = np.linalg.norm(y_axis)
    if ny < 1e-9:
        raise DegenerateInputError("index direction parallel to plane normal")
    y_axis = y_axis / ny
    z_axis = np.cross(x_axis, y_axis)
    rot = np.column_stack([x_axis, y_axis, z_axis])
    return Pose.from_rotation(rot, grasp)


def load_trajectories(jsonl_path, cloud_root=None) -> dict[str, TrackedEntity]:
    """Read a JSON Lines trajectory file into TrackedEntity values.

    One record per frame: {"t": seconds, "entity_id": str, "pose": {...},
    "cloud_ref": relative PLY path}. Cloud paths resolve against cloud_root
    (defaults to the JSONL's directory).
    """
    jsonl_path = Path(jsonl_path)
    root = Path(cloud_root) if cloud_root is not None else jsonl_path.parent
    frames: dict[str, list[tuple[float, Pose, PointCloud]]] = {}
    cloud_cache: dict[str, PointCloud] = {}
    with open(jsonl_path) as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            ref = rec["cloud_ref"]
            if ref not in cloud_cache:
                cloud_cache[ref] = load_featured_cloud(root / ref)
            frames.setdefault(rec["entity_id"], []).append(
                (float(rec["t"]), serialize.pose_from_json(rec["pose"]), cloud_cache[ref])
            )
    out = {}
    for eid, rows in frames.items():
        rows.sort(key=lambda r: r[0])
        ts = [r[0] for r in rows]
        out[eid] = TrackedEntity(
            id=eid,
            clouds=tuple(r[2] for r in rows),
            poses=tuple(r[1] for r in rows),
            timestamps=np.array(ts),
        )
    return out
