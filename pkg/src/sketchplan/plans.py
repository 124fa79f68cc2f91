"""Plan files and the independent replay checker.

Plans are serialized with every action fully resolved to concrete poses so a
replay needs no sample set. The replay checker deliberately re-derives the
geometric feasibility of each step from the task file alone (reach, approach
clearance, fresh base-motion planning) instead of trusting anything stored in
the plan beyond the action parameters.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional

from .geometry import Pose2
from .rng import derive_rng
from .sampling import MoveBase, Pick
from .search import Plan
from .validation import approach_corridor, grasp_compatible, plan_base_path
from .world import (InvariantViolation, Task, WorldState, apply_move, apply_pick,
                    apply_place, is_goal)

PLAN_FORMAT = "sketchplan-plan/1"


@dataclass(frozen=True)
class ResolvedAction:
    kind: str                    # "pick" | "place" | "move"
    base: Pose2                  # base pose after the action
    obj: Optional[str] = None
    grasp_angle: Optional[float] = None
    target: Optional[Pose2] = None  # object pose (pick) or placement (place)

    def to_json(self) -> dict:
        return {
            "type": self.kind,
            "base": self.base.to_list(),
            "obj": self.obj,
            "grasp_angle": self.grasp_angle,
            "target": None if self.target is None else self.target.to_list(),
        }

    @staticmethod
    def from_json(d) -> "ResolvedAction":
        return ResolvedAction(
            kind=d["type"],
            base=Pose2.from_list(d["base"]),
            obj=d.get("obj"),
            grasp_angle=d.get("grasp_angle"),
            target=None if d.get("target") is None else Pose2.from_list(d["target"]),
        )


def plan_to_json(plan: Plan, seed: int, planner: str) -> dict:
    acts = []
    for i, (action, motion) in enumerate(plan.actions):
        state_before = plan.states[i]
        if isinstance(action, MoveBase):
            ra = ResolvedAction("move", motion.end_state.base)
        elif isinstance(action, Pick):
            obj, grasp, base = motion.manipulation
            ra = ResolvedAction("pick", base, obj, grasp,
                                state_before.object_poses[obj])
        else:
            obj, grasp, base = motion.manipulation
            ra = ResolvedAction("place", base, obj, grasp,
                                motion.end_state.object_poses[obj])
        d = ra.to_json()
        d["base_path"] = [p.to_list() for p in motion.base_path]
        d["cost"] = round(motion.cost, 9)
        acts.append(d)
    return {
        "format": PLAN_FORMAT,
        "seed": seed,
        "planner": planner,
        "total_cost": round(plan.total_cost, 9),
        "actions": acts,
        "subplans": [{
            "rule": s.rule,
            "start": s.start_index,
            "end": s.end_index,
            "features_before": s.features_before.as_dict(),
            "features_after": s.features_after.as_dict(),
        } for s in plan.subplans],
        "start_state": plan.states[0].to_json(),
    }


def save_plan(plan: Plan, seed: int, planner: str, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(plan_to_json(plan, seed, planner), f, indent=1)
        f.write("\n")


@dataclass
class LoadedPlan:
    seed: int
    planner: str
    actions: list[ResolvedAction]
    base_paths: list[list[Pose2]]
    subplans: list[dict]
    start_state: WorldState
    total_cost: float


def load_plan(path) -> LoadedPlan:
    with open(path, "r", encoding="utf-8") as f:
        d = json.load(f)
    if d.get("format") != PLAN_FORMAT:
        raise ValueError(f"unsupported plan format {d.get('format')!r}")
    return LoadedPlan(
        seed=int(d["seed"]),
        planner=d["planner"],
        actions=[ResolvedAction.from_json(a) for a in d["actions"]],
        base_paths=[[Pose2.from_list(p) for p in a["base_path"]] for a in d["actions"]],
        subplans=d["subplans"],
        start_state=WorldState.from_json(d["start_state"]),
        total_cost=float(d["total_cost"]),
    )


@dataclass
class ReplayReport:
    ok: bool
    index: Optional[int] = None
    reason: Optional[str] = None

    def __str__(self):
        if self.ok:
            return "ok"
        at = "terminal state" if self.index is None else f"action {self.index}"
        return f"violation at {at}: {self.reason}"


def _corridor_clear(task: Task, state: WorldState, obj: str, base: Pose2,
                    target: Pose2) -> Optional[str]:
    radius = task.object_by_id(obj).radius
    corridor = approach_corridor(base, target, radius, task.robot.reach_min)
    for oid, p in state.object_poses.items():
        if oid == obj:
            continue
        r = task.object_by_id(oid).radius
        if corridor.intersects_disc(p.x, p.y, r):
            return f"approach corridor blocked by {oid}"
        if p.dist(base) < task.robot.base_radius + r - 1e-9:
            return f"base overlaps {oid}"
    return None


def replay_plan(task: Task, plan: LoadedPlan) -> ReplayReport:
    """Re-validate every action with full checks and a fresh motion RNG
    seeded from the plan file; verify the terminal state is a goal state."""
    state = task.start
    if plan.start_state.to_json() != state.to_json():
        return ReplayReport(False, 0, "plan start state differs from task start")
    for i, ra in enumerate(plan.actions):
        rng = derive_rng(plan.seed, "replay", i)
        if ra.kind == "move":
            path = plan_base_path(task, state.base, ra.base, rng)
            if path is None:
                return ReplayReport(False, i, "no base path for move")
            state = apply_move(state, ra.base)
            continue
        if ra.obj is None or ra.target is None or ra.grasp_angle is None:
            return ReplayReport(False, i, "manipulation action missing parameters")
        d = ra.base.dist(ra.target)
        if not (task.robot.reach_min <= d <= task.robot.reach_max):
            return ReplayReport(False, i, "target outside the reach annulus")
        if not grasp_compatible(ra.base, ra.target, ra.grasp_angle):
            return ReplayReport(False, i, "grasp angle incompatible with approach")
        if state.base.dist(ra.base) > 1e-12:
            path = plan_base_path(task, state.base, ra.base, rng)
            if path is None:
                return ReplayReport(False, i, "no base path to the action base")
        err = _corridor_clear(task, state, ra.obj, ra.base, ra.target)
        if err:
            return ReplayReport(False, i, err)
        try:
            if ra.kind == "pick":
                if state.object_poses.get(ra.obj) is None or \
                        state.object_poses[ra.obj].dist(ra.target) > 1e-9:
                    return ReplayReport(False, i, "pick target does not match object pose")
                state = apply_pick(task, state, ra.obj, ra.grasp_angle, ra.base)
            elif ra.kind == "place":
                state = apply_place(task, state, ra.obj, ra.target, ra.base)
            else:
                return ReplayReport(False, i, f"unknown action type {ra.kind!r}")
        except InvariantViolation as exc:
            return ReplayReport(False, i, str(exc))
    if not is_goal(state, task):
        return ReplayReport(False, None, "terminal state not goal")
    return ReplayReport(True)
