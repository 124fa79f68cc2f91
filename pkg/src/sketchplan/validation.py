"""Three-stage action validation: reach test, clearance (IK surrogate), motion.

The stages run as sequential filters in increasing cost order. Lazy mode stops
after stage 2 and defers the motion plan to candidate-plan extraction; full
mode runs all three. Stage timings are modeled by deterministic iteration
budgets instead of wall clocks so runs are reproducible.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .geometry import (CORRIDOR_CLEARANCE, Corridor, GRASP_CONE, Pose2,
                       approach_corridor, grasp_compatible, polyline_length,
                       seg_rect_intersects)
from .sampling import GroundAction, MoveBase, Pick, Place, SampleSet
from .world import (InvariantViolation, Task, WorldState, apply_move, apply_pick,
                    apply_place, check_state_invariants)

IK_BUDGET_DEFAULT = 64        # obstacle tests per clearance call before timing out
RRT_STEP = 0.15               # m per tree extension
RRT_GOAL_BIAS = 0.1
RRT_ITER_CAP = 2000
SHORTCUT_PASSES = 50
MANIPULATION_COST = 1.0       # m-equivalent charged per pick or place


@dataclass
class PipelineStats:
    """Per-stage call/pass counters for the manipulation pipeline, plus
    separate counters for base-motion validation (move actions skip stages
    1-2, so folding them in would break the filter invariant). Wall time is
    profiling only and is never serialized: runs must be byte-deterministic.
    """

    calls: list[int] = field(default_factory=lambda: [0, 0, 0])
    passes: list[int] = field(default_factory=lambda: [0, 0, 0])
    seconds: list[float] = field(default_factory=lambda: [0.0, 0.0, 0.0])
    move_calls: int = 0
    move_passes: int = 0
    rrt_iterations: int = 0

    def record(self, stage: int, passed: bool, dt: float = 0.0) -> None:
        self.calls[stage - 1] += 1
        if passed:
            self.passes[stage - 1] += 1
        self.seconds[stage - 1] += dt

    def record_move(self, passed: bool) -> None:
        self.move_calls += 1
        if passed:
            self.move_passes += 1

    def merge(self, other: "PipelineStats") -> None:
        for i in range(3):
            self.calls[i] += other.calls[i]
            self.passes[i] += other.passes[i]
            self.seconds[i] += other.seconds[i]
        self.move_calls += other.move_calls
        self.move_passes += other.move_passes
        self.rrt_iterations += other.rrt_iterations

    def pass_ratio(self, stage: int) -> float:
        c = self.calls[stage - 1]
        return self.passes[stage - 1] / c if c else 0.0

    def stage3_total_calls(self) -> int:
        """Motion-planner invocations of any kind (manipulation + move)."""
        return self.calls[2] + self.move_calls

    def check_filter_order(self) -> None:
        """Stage i+1 is never invoked on an action that failed stage i."""
        if self.calls[1] > self.passes[0]:
            raise AssertionError("stage 2 called more often than stage 1 passed")
        if self.calls[2] > self.passes[1]:
            raise AssertionError("stage 3 called more often than stage 2 passed")

    def to_json(self) -> dict:
        return {"calls": list(self.calls), "passes": list(self.passes),
                "move_calls": self.move_calls, "move_passes": self.move_passes,
                "rrt_iterations": self.rrt_iterations}

    def csv_rows(self) -> list[dict]:
        rows = []
        cum = 1.0
        for i in range(3):
            ratio = self.pass_ratio(i + 1)
            cum *= ratio if self.calls[i] else 1.0
            rows.append({"stage": i + 1, "calls": self.calls[i], "passes": self.passes[i],
                         "pass_ratio": round(ratio, 6),
                         "cumulative_pass_ratio": round(cum, 6)})
        return rows


@dataclass(frozen=True)
class MotionPlan:
    """Validated motion for one action: the base path (possibly empty), the
    manipulation record for pick/place, the resulting state and its cost."""

    base_path: tuple[Pose2, ...]
    manipulation: Optional[tuple[str, float, Pose2]]  # (object, grasp angle, base)
    end_state: WorldState
    cost: float


@dataclass(frozen=True)
class Feasible:
    motion: MotionPlan


@dataclass(frozen=True)
class Infeasible:
    stage: int


@dataclass(frozen=True)
class ProvisionallyFeasible:
    end_state: WorldState
    est_cost: float


ValidationResult = Feasible | Infeasible | ProvisionallyFeasible


def action_target(state: WorldState, action: GroundAction, samples: SampleSet) -> Pose2:
    if isinstance(action, Pick):
        return state.object_poses[action.obj]
    if isinstance(action, Place):
        return samples.placement_pose((action.table, action.slot))
    raise ValueError("move-base actions have no manipulation target")


def action_base(action: GroundAction, samples: SampleSet) -> Pose2:
    if isinstance(action, MoveBase):
        return samples.bases[action.dst]
    return samples.bases[action.base]


def in_arm_workspace(state: WorldState, action: GroundAction, samples: SampleSet,
                     task: Task) -> bool:
    """Stage 1: the manipulation target lies in the reach annulus of the
    action's base pose."""
    target = action_target(state, action, samples)
    base = action_base(action, samples)
    d = base.dist(target)
    return task.robot.reach_min <= d <= task.robot.reach_max


def inverse_kinematics(state: WorldState, action: GroundAction, samples: SampleSet,
                       task: Task, budget: int = IK_BUDGET_DEFAULT) -> bool:
    """Stage 2 surrogate: grasp-cone compatibility, a clear approach corridor,
    a free base disc, and (for places) a free placement spot.

    Consumes at most `budget` obstacle tests; exceeding it is a fail, the
    analogue of an iterative solver timing out.
    """
    target = action_target(state, action, samples)
    base = action_base(action, samples)
    if isinstance(action, Pick):
        obj = action.obj
        grasp = samples.grasps[action.grasp]
    else:
        obj = action.obj
        grasp = state.held[1] if state.held else 0.0
    if not grasp_compatible(base, target, grasp):
        return False

    radius = task.object_by_id(obj).radius
    corridor = approach_corridor(base, target, radius, task.robot.reach_min)
    tests = 0
    for oid in state.standing_ids():
        if oid == obj:
            continue
        tests += 1
        if tests > budget:
            return False
        p = state.object_poses[oid]
        other_r = task.object_by_id(oid).radius
        if corridor.intersects_disc(p.x, p.y, other_r):
            return False
        # base disc must not overlap standing objects
        if p.dist(base) < task.robot.base_radius + other_r - 1e-9:
            return False
        if isinstance(action, Place) and p.dist(target) < radius + other_r - 1e-9:
            return False
    if isinstance(action, Place):
        table = task.table_by_id(action.table)
        if not table.rect.contains_disc(target.x, target.y, radius):
            return False
    return True


def _base_segment_free(task: Task, a: Pose2, b: Pose2) -> bool:
    br = task.robot.base_radius
    if not (task.arena.contains_disc(a.x, a.y, br) and task.arena.contains_disc(b.x, b.y, br)):
        return False
    for t in task.tables:
        if seg_rect_intersects(a.x, a.y, b.x, b.y, t.rect, inflate=br - 1e-9):
            return False
    return True


def plan_base_path(task: Task, start: Pose2, goal: Pose2, rng: np.random.Generator,
                   iter_cap: int = RRT_ITER_CAP,
                   stats: PipelineStats | None = None) -> Optional[list[Pose2]]:
    """RRT-Connect for the disc base among tables, shortcut-smoothed.

    Standing objects sit on tables and never block base motion. Returns the
    waypoint list (start..goal) or None after `iter_cap` tree extensions.
    """
    if start.dist(goal) < 1e-12:
        return [start, goal]
    if _base_segment_free(task, start, goal):
        return _shortcut(task, [start, goal], rng)

    tree_s = [(start, -1)]  # (pose, parent index)
    tree_g = [(goal, -1)]
    iters = 0

    def extend(tree, sample: Pose2):
        nonlocal iters
        iters += 1
        if stats is not None:
            stats.rrt_iterations += 1
        idx = min(range(len(tree)), key=lambda i: tree[i][0].dist(sample))
        near = tree[idx][0]
        d = near.dist(sample)
        if d <= RRT_STEP:
            new = sample
        else:
            f = RRT_STEP / d
            new = Pose2(near.x + f * (sample.x - near.x),
                        near.y + f * (sample.y - near.y), 0.0)
        if _base_segment_free(task, near, new):
            tree.append((new, idx))
            return len(tree) - 1
        return None

    def connect(tree, target: Pose2):
        while iters < iter_cap:
            i = extend(tree, target)
            if i is None:
                return None
            if tree[i][0].dist(target) < 1e-9:
                return i
        return None

    a, b = tree_s, tree_g  # a is the tree extended toward the random sample
    while iters < iter_cap:
        if rng.uniform() < RRT_GOAL_BIAS:
            x = b[0][0]
        else:
            x = Pose2(float(rng.uniform(task.arena.x_min, task.arena.x_max)),
                      float(rng.uniform(task.arena.y_min, task.arena.y_max)), 0.0)
        i = extend(a, x)
        if i is not None:
            j = connect(b, a[i][0])
            if j is not None:
                if a is tree_s:
                    path = _trace(a, i)[::-1] + _trace(b, j)[1:]
                else:
                    path = _trace(b, j)[::-1] + _trace(a, i)[1:]
                return _shortcut(task, path, rng)
        a, b = b, a
    return None


def _trace(tree, i) -> list[Pose2]:
    out = []
    while i != -1:
        out.append(tree[i][0])
        i = tree[i][1]
    return out


def _shortcut(task: Task, path: list[Pose2], rng: np.random.Generator) -> list[Pose2]:
    """Shortcut smoothing: the endpoints first, then 50 random segment pairs."""
    if len(path) <= 2:
        return path
    pts = list(path)
    if _base_segment_free(task, pts[0], pts[-1]):
        return [pts[0], pts[-1]]
    for _ in range(SHORTCUT_PASSES):
        if len(pts) <= 2:
            break
        i = int(rng.integers(0, len(pts) - 1))
        j = int(rng.integers(0, len(pts) - 1))
        if abs(i - j) < 2:
            continue
        i, j = min(i, j), max(i, j)
        if _base_segment_free(task, pts[i], pts[j]):
            pts = pts[:i + 1] + pts[j:]
    return pts


def predicted_state(task: Task, state: WorldState, action: GroundAction,
                    samples: SampleSet) -> WorldState:
    """Analytic end state of `action`; identical to the motion plan's end state."""
    if isinstance(action, MoveBase):
        return apply_move(state, samples.bases[action.dst])
    base = samples.bases[action.base]
    if isinstance(action, Pick):
        return apply_pick(task, state, action.obj, samples.grasps[action.grasp], base)
    target = samples.placement_pose((action.table, action.slot))
    return apply_place(task, state, action.obj, target, base)


def estimated_cost(state: WorldState, action: GroundAction, samples: SampleSet) -> float:
    """Deterministic edge-cost estimate used for parent ordering: straight-line
    meters for base moves, a flat manipulation charge for pick/place."""
    if isinstance(action, MoveBase):
        return samples.bases[action.src].dist(samples.bases[action.dst])
    return MANIPULATION_COST


def motion_plan(state: WorldState, action: GroundAction, samples: SampleSet,
                task: Task, rng: np.random.Generator,
                iter_cap: int = RRT_ITER_CAP,
                stats: PipelineStats | None = None) -> Optional[MotionPlan]:
    """Stage 3: plan the base path and assemble the full motion.

    Pick/place actions include driving from the current base to the action
    base when they differ; the approach corridor is then re-checked at the
    final base (it only depends on the action base, so this re-check is the
    contract's final gate before committing the motion).
    """
    if isinstance(action, MoveBase):
        goal = samples.bases[action.dst]
        path = plan_base_path(task, state.base, goal, rng, iter_cap, stats)
        if path is None:
            return None
        end = apply_move(state, goal)
        return MotionPlan(tuple(path), None, end, polyline_length(path))

    base = samples.bases[action.base]
    path = [state.base, base] if state.base.dist(base) < 1e-12 else \
        plan_base_path(task, state.base, base, rng, iter_cap, stats)
    if path is None:
        return None
    if not inverse_kinematics(state, action, samples, task):
        return None
    end = predicted_state(task, state, action, samples)
    grasp = samples.grasps[action.grasp] if isinstance(action, Pick) else \
        (state.held[1] if state.held else 0.0)
    manip = (action.obj, grasp, base)
    return MotionPlan(tuple(path), manip, end,
                      polyline_length(path) + MANIPULATION_COST)


def validate(state: WorldState, action: GroundAction, samples: SampleSet, task: Task,
             mode: str, stats: PipelineStats, rng: np.random.Generator | None = None,
             ik_budget: int = IK_BUDGET_DEFAULT,
             iter_cap: int = RRT_ITER_CAP) -> ValidationResult:
    """Run the pipeline in 'lazy' or 'full' mode, updating `stats`.

    Lazy mode returns ProvisionallyFeasible after stages 1-2 (move-base
    actions skip straight past them). Full mode also runs stage 3.
    """
    if not isinstance(action, MoveBase):
        t0 = time.perf_counter()
        ok = in_arm_workspace(state, action, samples, task)
        stats.record(1, ok, time.perf_counter() - t0)
        if not ok:
            return Infeasible(1)
        t0 = time.perf_counter()
        ok = inverse_kinematics(state, action, samples, task, ik_budget)
        stats.record(2, ok, time.perf_counter() - t0)
        if not ok:
            return Infeasible(2)
    if mode == "lazy":
        return ProvisionallyFeasible(predicted_state(task, state, action, samples),
                                     estimated_cost(state, action, samples))
    if rng is None:
        raise ValueError("full validation needs an RNG for the motion planner")
    t0 = time.perf_counter()
    motion = motion_plan(state, action, samples, task, rng, iter_cap, stats)
    if isinstance(action, MoveBase):
        stats.record_move(motion is not None)
    else:
        stats.record(3, motion is not None, time.perf_counter() - t0)
    if motion is None:
        return Infeasible(3)
    return Feasible(motion)


def apply(state: WorldState, action: GroundAction, motion: MotionPlan,
          task: Task) -> WorldState:
    """State-transition function: the last state of a validated motion plan.

    Raises InvariantViolation when the post-state is invalid, which signals a
    validation bug upstream rather than a plannable failure.
    """
    check_state_invariants(task, motion.end_state)
    if isinstance(action, (Pick, Place)):
        if motion.manipulation is None or motion.manipulation[0] != action.obj:
            raise InvariantViolation("motion plan does not match the action")
    return motion.end_state
