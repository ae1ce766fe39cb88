"""Knowledge bank: content-addressed skill-record storage with text retrieval.

Records persist as canonical JSON in a plain directory; ids are SHA-256
digests of the canonical bytes, so identical content maps to the same id and
round-trips are byte-lossless. Writes take an advisory lock file; reads are
lock-free. The default bank path comes from $KEYCONTACT_BANK.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from .constraints import GraspRegion, SemanticConstraint, TrajectorySpec
from .errors import BankError, RecordNotFoundError, SchemaError
from .keypoints import KeypointFrame, WaypointPath
from .serialize import SCHEMA_VERSION, canonical_json, check_schema

__all__ = [
    "SkillRecord",
    "PlanRecord",
    "MeshRef",
    "Bank",
    "tokenize",
    "overlap_score",
    "default_bank_path",
]

ENV_BANK = "KEYCONTACT_BANK"


def default_bank_path() -> Path:
    return Path(os.environ.get(ENV_BANK, "./keycontact_bank"))


@dataclass(frozen=True)
class MeshRef:
    """Reference to an object mesh on disk: path plus content hash."""

    path: str
    sha256: str

    def to_json(self) -> dict:
        return {"path": self.path, "sha256": self.sha256}

    @staticmethod
    def from_json(d: dict) -> "MeshRef":
        return MeshRef(d["path"], d["sha256"])

    @staticmethod
    def of_file(path) -> "MeshRef":
        data = Path(path).read_bytes()
        return MeshRef(str(path), hashlib.sha256(data).hexdigest())


@dataclass(frozen=True)
class SkillRecord:
    """One learned subtask: keypoints, waypoints, constraints, provenance."""

    description: str
    phase: str  # "grasping" | "manipulation"
    master_kf: Optional[KeypointFrame] = None
    slave_kf: Optional[KeypointFrame] = None
    waypoints: Optional[WaypointPath] = None
    grasp_regions: tuple[GraspRegion, ...] = ()
    trajectory_spec: Optional[TrajectorySpec] = None
    semantic_constraints: tuple[SemanticConstraint, ...] = ()
    master_mesh: Optional[MeshRef] = None
    slave_mesh: Optional[MeshRef] = None
    demo_id: str = ""
    t_begin: float = 0.0
    t_end: float = 0.0

    def to_json(self) -> dict:
        return {
            "schema": SCHEMA_VERSION,
            "kind": "skill",
            "description": self.description,
            "phase": self.phase,
            "master_kf": self.master_kf.to_json() if self.master_kf else None,
            "slave_kf": self.slave_kf.to_json() if self.slave_kf else None,
            "waypoints": self.waypoints.to_json() if self.waypoints else None,
            "grasp_regions": [g.to_json() for g in self.grasp_regions],
            "trajectory_spec": self.trajectory_spec.to_json() if self.trajectory_spec else None,
            "semantic_constraints": [c.to_json() for c in self.semantic_constraints],
            "master_mesh": self.master_mesh.to_json() if self.master_mesh else None,
            "slave_mesh": self.slave_mesh.to_json() if self.slave_mesh else None,
            "provenance": {
                "demo_id": self.demo_id,
                "t_begin": self.t_begin,
                "t_end": self.t_end,
            },
        }

    @staticmethod
    def from_json(d: dict) -> "SkillRecord":
        check_schema(d, kind="SkillRecord")
        if d.get("kind") != "skill":
            raise SchemaError(f"not a skill record: kind={d.get('kind')!r}")
        prov = d.get("provenance", {})
        return SkillRecord(
            description=d["description"],
            phase=d["phase"],
            master_kf=KeypointFrame.from_json(d["master_kf"]) if d.get("master_kf") else None,
            slave_kf=KeypointFrame.from_json(d["slave_kf"]) if d.get("slave_kf") else None,
            waypoints=WaypointPath.from_json(d["waypoints"]) if d.get("waypoints") else None,
            grasp_regions=tuple(GraspRegion.from_json(g) for g in d.get("grasp_regions", [])),
            trajectory_spec=(
                TrajectorySpec.from_json(d["trajectory_spec"]) if d.get("trajectory_spec") else None
            ),
            semantic_constraints=tuple(
                SemanticConstraint.from_json(c) for c in d.get("semantic_constraints", [])
            ),
            master_mesh=MeshRef.from_json(d["master_mesh"]) if d.get("master_mesh") else None,
            slave_mesh=MeshRef.from_json(d["slave_mesh"]) if d.get("slave_mesh") else None,
            demo_id=prov.get("demo_id", ""),
            t_begin=prov.get("t_begin", 0.0),
            t_end=prov.get("t_end", 0.0),
        )


@dataclass(frozen=True)
class PlanRecord:
    """Task-level plan: description key and ordered subtask descriptions."""

    task: str
    subtasks: tuple[str, ...]

    def __post_init__(self):
        if not self.subtasks:
            raise ValueError("a plan needs at least one subtask")
        object.__setattr__(self, "subtasks", tuple(self.subtasks))

    def to_json(self) -> dict:
        return {
            "schema": SCHEMA_VERSION,
            "kind": "plan",
            "task": self.task,
            "subtasks": list(self.subtasks),
        }

    @staticmethod
    def from_json(d: dict) -> "PlanRecord":
        check_schema(d, kind="PlanRecord")
        if d.get("kind") != "plan":
            raise SchemaError(f"not a plan record: kind={d.get('kind')!r}")
        return PlanRecord(d["task"], tuple(d["subtasks"]))


_TOKEN = re.compile(r"[a-z0-9]+")


def tokenize(text: str) -> frozenset[str]:
    return frozenset(_TOKEN.findall(text.lower()))


def overlap_score(query_tokens: frozenset[str], doc_tokens: frozenset[str]) -> float:
    """Normalized token overlap (Jaccard index); 0 when either side is empty."""
    if not query_tokens or not doc_tokens:
        return 0.0
    inter = len(query_tokens & doc_tokens)
    union = len(query_tokens | doc_tokens)
    return inter / union


class Bank:
    """Directory-backed record store. Single-writer via an advisory lock file."""

    def __init__(self, root=None):
        self.root = Path(root) if root is not None else default_bank_path()
        self.records_dir = self.root / "records"
        self.index_path = self.root / "index.json"
        self.records_dir.mkdir(parents=True, exist_ok=True)
        if not self.index_path.exists():
            self._write_index([])

    # -- locking ------------------------------------------------------------
    def _lock(self):
        lock = self.root / ".lock"
        deadline = time.monotonic() + 10.0
        while True:
            try:
                fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
                os.close(fd)
                return lock
            except FileExistsError:
                if time.monotonic() > deadline:
                    raise BankError(f"bank locked: {lock} exists")
                time.sleep(0.02)

    def _write_index(self, ids: list[str]) -> None:
        self.index_path.write_text(canonical_json({"schema": SCHEMA_VERSION, "order": ids}))

    def _read_index(self) -> list[str]:
        d = json.loads(self.index_path.read_text())
        check_schema(d, kind="bank index")
        return list(d["order"])

    # -- core ops -----------------------------------------------------------
    def put(self, record) -> str:
        """Store a record; returns its content id. Idempotent per content."""
        if not hasattr(record, "to_json"):
            raise BankError(f"cannot store {type(record).__name__}")
        payload = canonical_json(record.to_json())
        rid = hashlib.sha256(payload.encode()).hexdigest()
        lock = self._lock()
        try:
            path = self.records_dir / f"{rid}.json"
            if not path.exists():
                path.write_text(payload)
                order = self._read_index()
                order.append(rid)
                self._write_index(order)
        finally:
            os.unlink(lock)
        return rid

    def get_raw(self, rid: str) -> dict:
        path = self.records_dir / f"{rid}.json"
        if not path.exists():
            raise RecordNotFoundError(rid)
        return json.loads(path.read_text())

    def get(self, rid: str):
        d = self.get_raw(rid)
        kind = d.get("kind")
        if kind == "skill":
            return SkillRecord.from_json(d)
        if kind == "plan":
            return PlanRecord.from_json(d)
        raise SchemaError(f"unknown record kind {kind!r}")

    def ids(self) -> list[str]:
        return self._read_index()

    def query_text(
        self, query: str, n_top: int = 5, label_filter: Optional[str] = None
    ) -> list[tuple[str, float]]:
        """Rank records by normalized token overlap with their description.

        Ties keep insertion order. label_filter keeps only skill records
        carrying a semantic constraint with that label (the user-supplied
        stand-in for semantic filtering).
        """
        if not self.ids():
            raise BankError("bank is empty")
        q = tokenize(query)
        scored = []
        for pos, rid in enumerate(self.ids()):
            d = self.get_raw(rid)
            text = d.get("description") if d.get("kind") == "skill" else d.get("task", "")
            if label_filter is not None:
                labels = {c.get("label") for c in d.get("semantic_constraints", [])}
                if label_filter not in labels:
                    continue
            scored.append((-overlap_score(q, tokenize(text or "")), pos, rid))
        scored.sort()
        return [(rid, -neg) for neg, _, rid in scored[:n_top]]
