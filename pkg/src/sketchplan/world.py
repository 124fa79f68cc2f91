"""Scene model: tables, disc objects, the robot, continuous states and goals.

A task is a self-contained 2D tabletop scene. Objects are discs standing on
axis-aligned tables; the robot is a disc base with an annular arm-reach band.
States are immutable; applying an action returns a new state.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Optional

from .geometry import Pose2, Rect

# Clearance used for strict disc separation tests; keeps tie behavior
# deterministic across platforms.
OVERLAP_EPS = 1e-9

# Word-goal layout convention, in units of object radius.
WORD_PITCH_RADII = 2.5
WORD_TOL_RADII = 0.25
WORD_MARGIN_RADII = 1.0

TASK_FORMAT = "sketchplan-task/1"


class InvariantViolation(Exception):
    """A state transition produced a physically invalid world state."""


@dataclass(frozen=True)
class GoalNone:
    """No goal: the object is never misplaced."""

    def to_json(self):
        return {"kind": "none"}


@dataclass(frozen=True)
class GoalRegion:
    """Object must stand anywhere inside an absolute rectangle on a table."""

    rect: Rect

    def to_json(self):
        return {"kind": "region", "rect": self.rect.to_json()}


@dataclass(frozen=True)
class GoalPose:
    """Object must stand within `tol` of an exact pose."""

    pose: Pose2
    tol: float

    def __post_init__(self):
        if self.tol <= 0.0:
            raise ValueError("exact-pose tolerance must be positive")

    def to_json(self):
        return {"kind": "pose", "pose": self.pose.to_list(), "tol": self.tol}


@dataclass(frozen=True)
class GoalWordSlot:
    """Object fills a slot of the target word; slot is the first index of its
    letter in the word. Actual membership is judged by the valid-prefix rule,
    so repeated letters may fill each other's slots."""

    slot: int

    def to_json(self):
        return {"kind": "word", "slot": self.slot}


GoalSpec = GoalNone | GoalRegion | GoalPose | GoalWordSlot


def goal_from_json(d) -> GoalSpec:
    kind = d["kind"]
    if kind == "none":
        return GoalNone()
    if kind == "region":
        return GoalRegion(Rect.from_json(d["rect"]))
    if kind == "pose":
        return GoalPose(Pose2.from_list(d["pose"]), float(d["tol"]))
    if kind == "word":
        return GoalWordSlot(int(d["slot"]))
    raise ValueError(f"unknown goal kind {kind!r}")


@dataclass(frozen=True)
class Table:
    id: str
    rect: Rect
    support_height: float = 0.75


@dataclass(frozen=True)
class MovableObject:
    id: str
    radius: float
    label: str
    goal: GoalSpec = field(default_factory=GoalNone)

    def __post_init__(self):
        if self.radius <= 0.0:
            raise ValueError("object radius must be positive")


@dataclass(frozen=True)
class RobotParams:
    base_radius: float
    reach_min: float
    reach_max: float
    home_note: str = "single home arm configuration"

    def __post_init__(self):
        if not (0.0 < self.reach_min < self.reach_max):
            raise ValueError("require 0 < reach_min < reach_max")


@dataclass(frozen=True)
class WorldState:
    """Full continuous state: robot base, held object (id, grasp angle), and
    poses of all standing objects. The held object has no pose entry."""

    base: Pose2
    held: Optional[tuple[str, float]]
    object_poses: dict[str, Pose2]

    def standing_ids(self) -> list[str]:
        return sorted(self.object_poses)

    def holding(self, obj_id: str) -> bool:
        return self.held is not None and self.held[0] == obj_id

    def to_json(self) -> dict:
        return {
            "base": self.base.to_list(),
            "held": None if self.held is None else [self.held[0], self.held[1]],
            "object_poses": {k: p.to_list() for k, p in sorted(self.object_poses.items())},
        }

    @staticmethod
    def from_json(d) -> "WorldState":
        held = d.get("held")
        return WorldState(
            base=Pose2.from_list(d["base"]),
            held=None if held is None else (str(held[0]), float(held[1])),
            object_poses={k: Pose2.from_list(v) for k, v in d["object_poses"].items()},
        )


@dataclass(frozen=True)
class Task:
    arena: Rect
    tables: tuple[Table, ...]
    objects: tuple[MovableObject, ...]
    robot: RobotParams
    start: WorldState
    family: str  # "sorting" | "nonmonotonic" | "words"
    word: Optional[str] = None

    def object_by_id(self, obj_id: str) -> MovableObject:
        return self._index[obj_id]

    @property
    def _index(self) -> dict[str, MovableObject]:
        idx = getattr(self, "_index_cache", None)
        if idx is None:
            idx = {o.id: o for o in self.objects}
            object.__setattr__(self, "_index_cache", idx)
        return idx

    def table_by_id(self, table_id: str) -> Table:
        for t in self.tables:
            if t.id == table_id:
                return t
        raise KeyError(table_id)

    def max_object_radius(self) -> float:
        return max(o.radius for o in self.objects) if self.objects else 0.0


def placement_free(state: WorldState, table: Table, pose: Pose2, radius: float,
                   radii: dict[str, float] | None = None,
                   ignore: str | None = None) -> bool:
    """True iff a disc of `radius` at `pose` fits fully on the table and
    overlaps no standing object.

    `radii` maps object id to radius; absent entries default to `radius`.
    `ignore` skips one object (used when relocating that object itself).
    """
    if not table.rect.contains_disc(pose.x, pose.y, radius):
        return False
    for oid, p in state.object_poses.items():
        if oid == ignore:
            continue
        other_r = radii.get(oid, radius) if radii else radius
        if p.dist(pose) < radius + other_r - OVERLAP_EPS:
            return False
    return True


def object_radii(task: Task) -> dict[str, float]:
    return {o.id: o.radius for o in task.objects}


def free_spot(task: Task, state: WorldState, table: Table, pose: Pose2, radius: float,
              ignore: str | None = None) -> bool:
    """placement_free with radii taken from the task."""
    return placement_free(state, table, pose, radius, object_radii(task), ignore)


def check_state_invariants(task: Task, state: WorldState) -> None:
    """Raise InvariantViolation unless `state` is physically valid for `task`."""
    if state.held is not None and state.held[0] in state.object_poses:
        raise InvariantViolation(f"held object {state.held[0]} also has a pose")
    ids = state.standing_ids()
    for i, a in enumerate(ids):
        ra = task.object_by_id(a).radius
        pa = state.object_poses[a]
        if not any(t.rect.contains_disc(pa.x, pa.y, ra) for t in task.tables):
            raise InvariantViolation(f"object {a} not fully on any table")
        for b in ids[i + 1:]:
            rb = task.object_by_id(b).radius
            if pa.dist(state.object_poses[b]) < ra + rb - OVERLAP_EPS:
                raise InvariantViolation(f"objects {a} and {b} overlap")
    br = task.robot.base_radius
    for t in task.tables:
        if t.rect.intersects_disc(state.base.x, state.base.y, br - OVERLAP_EPS):
            raise InvariantViolation("robot base intersects a table")


def words_valid_prefix(state: WorldState, task: Task) -> list[tuple[str, int]]:
    """Longest placed prefix of the target word, as (object-id, slot) pairs.

    Consecutive letters must sit in a row at the configured pitch (within
    tolerance) and the remaining letters must still fit on the table at that
    pitch with at least one radius of margin. Ties break on leftmost anchor.
    """
    if task.family != "words" or not task.word:
        return []
    word = task.word
    radius = task.max_object_radius()
    pitch = WORD_PITCH_RADII * radius
    tol = WORD_TOL_RADII * radius
    margin = WORD_MARGIN_RADII * radius

    # candidate blocks per letter, standing only
    by_letter: dict[str, list[str]] = {}
    for oid in state.standing_ids():
        obj = task.object_by_id(oid)
        if obj.label in word:
            by_letter.setdefault(obj.label, []).append(oid)

    table = task.tables[0]
    inner = table.rect.shrunk(margin)

    def fits_from(anchor: Pose2) -> bool:
        last_x = anchor.x + (len(word) - 1) * pitch
        return (inner.contains_point(anchor.x, anchor.y)
                and inner.contains_point(last_x, anchor.y))

    best: list[tuple[str, int]] = []
    best_anchor_x = math.inf
    # anchors: every standing block of the first letter
    for first in by_letter.get(word[0], []):
        anchor = state.object_poses[first]
        if not fits_from(anchor):
            continue
        chain = [(first, 0)]
        used = {first}
        for slot in range(1, len(word)):
            want = (anchor.x + slot * pitch, anchor.y)
            found = None
            for cand in by_letter.get(word[slot], []):
                if cand in used:
                    continue
                p = state.object_poses[cand]
                if abs(p.x - want[0]) <= tol and abs(p.y - want[1]) <= tol:
                    found = cand
                    break
            if found is None:
                break
            chain.append((found, slot))
            used.add(found)
        if len(chain) > len(best) or (len(chain) == len(best) and chain
                                      and anchor.x < best_anchor_x):
            best = chain
            best_anchor_x = anchor.x
    return best


def goal_holds(task: Task, state: WorldState, obj: MovableObject,
               prefix_ids: set[str] | None = None) -> bool:
    """True iff a *standing* object satisfies its goal in `state`."""
    pose = state.object_poses.get(obj.id)
    if pose is None:
        return False
    g = obj.goal
    if isinstance(g, GoalNone):
        return True
    if isinstance(g, GoalRegion):
        return g.rect.contains_point(pose.x, pose.y)
    if isinstance(g, GoalPose):
        return pose.dist(g.pose) <= g.tol
    if isinstance(g, GoalWordSlot):
        if prefix_ids is None:
            prefix_ids = {oid for oid, _ in words_valid_prefix(state, task)}
        return obj.id in prefix_ids
    raise TypeError(g)


def misplaced_standing(state: WorldState, task: Task) -> list[str]:
    """Standing objects that have a goal and violate it, sorted by id."""
    prefix_ids = None
    if task.family == "words":
        prefix_ids = {oid for oid, _ in words_valid_prefix(state, task)}
    out = []
    for oid in state.standing_ids():
        obj = task.object_by_id(oid)
        if isinstance(obj.goal, GoalNone):
            continue
        if not goal_holds(task, state, obj, prefix_ids):
            out.append(oid)
    return out


def misplaced_set(state: WorldState, task: Task,
                  held_blocked: bool | None = None) -> set[str]:
    """Misplaced objects: standing outside their goal, plus the held object
    when all of its sampled goal placements are blocked.

    The held-object blockage test needs the sample set and corridor geometry,
    which live in the sketch-feature layer; callers there pass `held_blocked`.
    Without it, a held object with a goal counts as misplaced only when
    explicitly flagged.
    """
    out = set(misplaced_standing(state, task))
    if state.held is not None:
        obj = task.object_by_id(state.held[0])
        if not isinstance(obj.goal, GoalNone) and bool(held_blocked):
            out.add(obj.id)
    return out


def is_goal(state: WorldState, task: Task) -> bool:
    """Goal test: nothing held and no standing object misplaced."""
    if state.held is not None:
        return False
    return not misplaced_standing(state, task)


def apply_move(state: WorldState, target: Pose2) -> WorldState:
    return replace(state, base=target)


def apply_pick(task: Task, state: WorldState, obj_id: str, grasp: float,
               base: Pose2) -> WorldState:
    if state.held is not None:
        raise InvariantViolation("pick while already holding")
    if obj_id not in state.object_poses:
        raise InvariantViolation(f"pick of non-standing object {obj_id}")
    poses = dict(state.object_poses)
    del poses[obj_id]
    new = WorldState(base=base, held=(obj_id, grasp), object_poses=poses)
    check_state_invariants(task, new)
    return new


def apply_place(task: Task, state: WorldState, obj_id: str, pose: Pose2,
                base: Pose2) -> WorldState:
    if state.held is None or state.held[0] != obj_id:
        raise InvariantViolation(f"place of non-held object {obj_id}")
    poses = dict(state.object_poses)
    poses[obj_id] = pose
    new = WorldState(base=base, held=None, object_poses=poses)
    check_state_invariants(task, new)
    return new


# ---------------------------------------------------------------------------
# Task serialization ("sketchplan-task/1")

def task_to_json(task: Task) -> dict:
    return {
        "format": TASK_FORMAT,
        "arena": task.arena.to_json(),
        "tables": [{"id": t.id, "rect": t.rect.to_json(), "support_height": t.support_height}
                   for t in task.tables],
        "objects": [{"id": o.id, "radius": o.radius, "label": o.label,
                     "goal": o.goal.to_json()} for o in task.objects],
        "robot": {"base_radius": task.robot.base_radius,
                  "reach_min": task.robot.reach_min,
                  "reach_max": task.robot.reach_max,
                  "home_note": task.robot.home_note},
        "start": task.start.to_json(),
        "family": task.family,
        "word": task.word,
    }


def task_from_json(d) -> Task:
    if d.get("format") != TASK_FORMAT:
        raise ValueError(f"unsupported task format {d.get('format')!r}")
    task = Task(
        arena=Rect.from_json(d["arena"]),
        tables=tuple(Table(t["id"], Rect.from_json(t["rect"]),
                           float(t.get("support_height", 0.75))) for t in d["tables"]),
        objects=tuple(MovableObject(o["id"], float(o["radius"]), o["label"],
                                    goal_from_json(o["goal"])) for o in d["objects"]),
        robot=RobotParams(float(d["robot"]["base_radius"]),
                          float(d["robot"]["reach_min"]),
                          float(d["robot"]["reach_max"]),
                          d["robot"].get("home_note", "")),
        start=WorldState.from_json(d["start"]),
        family=d["family"],
        word=d.get("word"),
    )
    check_state_invariants(task, task.start)
    return task


def save_task(task: Task, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(task_to_json(task), f, indent=1)
        f.write("\n")


def load_task(path) -> Task:
    with open(path, "r", encoding="utf-8") as f:
        return task_from_json(json.load(f))
