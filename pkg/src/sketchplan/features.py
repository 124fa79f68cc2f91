"""Sketch-feature values from corridor geometry.

An object blocks a pick or place when its disc intersects the approach
corridor of that manipulation, exactly the clearance test the validation
pipeline applies, so a zero count is an executable promise. The counting is
still an over-approximation of true infeasibility: no IK budget is consumed
and no motion is planned here.

For one misplaced object the pick side ranges over (base, grasp) pairs and
the place side over (goal slot, base) pairs sharing the pick's grasp; alpha
is the smallest union of distinct blockers over consistent pick/place
combinations, beta the fewest misplaced objects whose own picks a goal
placement would newly obstruct.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Corridor, Pose2
from .sampling import SampleSet
from .sketch import BLOCK_INF, FeatureVec
from .validation import approach_corridor, grasp_compatible
from .world import GoalNone, Task, WorldState, misplaced_standing


@dataclass(frozen=True)
class _PickOption:
    grasp: int          # index into samples.grasps
    base: int
    mask: int           # bitmask of blocker object indices
    corridor: Corridor


@dataclass(frozen=True)
class _PlaceOption:
    grasp_angle: float
    slot: int           # index into the goal slot list for this object
    base: int
    mask: int
    corridor: Corridor
    pose: Pose2


class BoardContext:
    """Corridor blocker tables for one arrangement of standing objects.

    The board is the set of standing discs; the held object (if any) is not
    on it. Option masks are bitmasks over board indices, so unions and
    counts are single integer operations.
    """

    def __init__(self, task: Task, samples: SampleSet, board: dict[str, Pose2]):
        self.task = task
        self.samples = samples
        self.board = board
        self.ids = sorted(board)
        self.bit = {oid: 1 << i for i, oid in enumerate(self.ids)}
        self.xs = np.array([board[i].x for i in self.ids])
        self.ys = np.array([board[i].y for i in self.ids])
        self.rs = np.array([task.object_by_id(i).radius for i in self.ids])
        self._pick_cache: dict[str, list[_PickOption]] = {}
        self._place_cache: dict[str, list[_PlaceOption]] = {}
        self._alpha_cache: dict[str, int] = {}

    # -- option enumeration --------------------------------------------------

    def _corridor_mask(self, corridor: Corridor, exclude: str | None) -> int:
        if len(self.ids) == 0:
            return 0
        inside = corridor.dists(self.xs, self.ys) < self.rs
        mask = 0
        for i, oid in enumerate(self.ids):
            if inside[i] and oid != exclude:
                mask |= 1 << i
        return mask

    def pick_options(self, oid: str) -> list[_PickOption]:
        """All reach- and grasp-consistent picks of a standing object."""
        if oid in self._pick_cache:
            return self._pick_cache[oid]
        pose = self.board[oid]
        radius = self.task.object_by_id(oid).radius
        rmin, rmax = self.task.robot.reach_min, self.task.robot.reach_max
        out = []
        for bi, base in enumerate(self.samples.bases):
            d = base.dist(pose)
            if not (rmin <= d <= rmax):
                continue
            for gi, g in enumerate(self.samples.grasps):
                if not grasp_compatible(base, pose, g):
                    continue
                c = approach_corridor(base, pose, radius, rmin)
                out.append(_PickOption(gi, bi, self._corridor_mask(c, oid), c))
        self._pick_cache[oid] = out
        return out

    def goal_slot_poses(self, oid: str) -> list[Pose2]:
        refs = self.samples.goal_refs.get(oid, ())
        return [self.samples.placement_pose(r) for r in refs]

    def place_options(self, oid: str, grasp_angle: float | None = None) -> list[_PlaceOption]:
        """All reach- and grasp-consistent placements of `oid` at its goal
        slots. Blocker masks include objects overlapping the slot itself."""
        key = oid if grasp_angle is None else f"{oid}@{grasp_angle!r}"
        if key in self._place_cache:
            return self._place_cache[key]
        radius = self.task.object_by_id(oid).radius
        rmin, rmax = self.task.robot.reach_min, self.task.robot.reach_max
        out = []
        for si, p in enumerate(self.goal_slot_poses(oid)):
            occ = self._occupancy_mask(p, radius, oid)
            for bi, base in enumerate(self.samples.bases):
                d = base.dist(p)
                if not (rmin <= d <= rmax):
                    continue
                if grasp_angle is not None:
                    grasps = [grasp_angle] if grasp_compatible(base, p, grasp_angle) else []
                else:
                    grasps = [g for g in self.samples.grasps
                              if grasp_compatible(base, p, g)]
                for g in grasps:
                    c = approach_corridor(base, p, radius, rmin)
                    out.append(_PlaceOption(g, si, bi,
                                            self._corridor_mask(c, oid) | occ, c, p))
        self._place_cache[key] = out
        return out

    def _occupancy_mask(self, pose: Pose2, radius: float, exclude: str) -> int:
        if len(self.ids) == 0:
            return 0
        d = np.hypot(self.xs - pose.x, self.ys - pose.y)
        overlap = d < (self.rs + radius - 1e-9)
        mask = 0
        for i, oid in enumerate(self.ids):
            if overlap[i] and oid != exclude:
                mask |= 1 << i
        return mask

    # -- feature ingredients -------------------------------------------------

    def _extra_bit(self, corridor: Corridor, extra: tuple[Pose2, float] | None) -> int:
        if extra is None:
            return 0
        pose, radius = extra
        return 1 if corridor.intersects_disc(pose.x, pose.y, radius) else 0

    def alpha(self, oid: str, extra: tuple[Pose2, float] | None = None) -> int:
        """Minimum distinct blockers over consistent pick/place pairs of a
        standing misplaced object. `extra` adds a hypothetical disc
        (used to judge whether placing something there would obstruct)."""
        if extra is None and oid in self._alpha_cache:
            return self._alpha_cache[oid]
        picks = self.pick_options(oid)
        places = self.place_options(oid)
        best = BLOCK_INF
        extra_bit = 1 << len(self.ids)  # virtual index for the extra disc
        for po in picks:
            pm = po.mask | (extra_bit if self._extra_bit(po.corridor, extra) else 0)
            g = self.samples.grasps[po.grasp]
            for pl in places:
                if pl.grasp_angle != g:
                    continue
                qm = pl.mask | (extra_bit if self._extra_bit(pl.corridor, extra) else 0)
                n = (pm | qm).bit_count()
                if n < best:
                    best = n
                    if best == 0:
                        break
            if best == 0:
                break
        if extra is None:
            self._alpha_cache[oid] = best
        return best

    def alpha_held(self, oid: str, grasp_angle: float,
                   extra: tuple[Pose2, float] | None = None) -> int:
        """Alpha for the held object: only the place side remains, with the
        grasp fixed to the one in hand."""
        best = BLOCK_INF
        extra_bit = 1 << len(self.ids)
        for pl in self.place_options(oid, grasp_angle):
            qm = pl.mask | (extra_bit if self._extra_bit(pl.corridor, extra) else 0)
            n = qm.bit_count()
            if n < best:
                best = n
                if best == 0:
                    return 0
        return best

    def pick_min(self, oid: str, extra: tuple[Pose2, float] | None = None) -> int:
        picks = self.pick_options(oid)
        best = BLOCK_INF
        extra_bit = 1 << len(self.ids)
        for po in picks:
            pm = po.mask | (extra_bit if self._extra_bit(po.corridor, extra) else 0)
            n = pm.bit_count()
            if n < best:
                best = n
                if best == 0:
                    return 0
        return best

    def beta(self, oid: str, blockable: list[str]) -> int:
        """Fewest misplaced objects whose combined pick/place blockage would
        grow if `oid` stood at one of its goal slots; minimum over the slots.

        This is what keeps parking an obstructor neutral on the u feature:
        the blockage it exerted while standing reappears as its own beta,
        because returning it home would re-block its ward.
        """
        slots = self.goal_slot_poses(oid)
        if not slots:
            return 0
        radius = self.task.object_by_id(oid).radius
        best = BLOCK_INF
        for p in slots:
            n = 0
            for k in blockable:
                if k == oid or k not in self.board:
                    continue
                if self.alpha(k, extra=(p, radius)) > self.alpha(k):
                    n += 1
            best = min(best, n)
            if best == 0:
                return 0
        return best

    def held_goal_blocked(self, oid: str, grasp_angle: float) -> bool:
        """Every goal slot of the held object is unusable: occupied, out of
        any compatible base's reach, or its place corridor obstructed."""
        slots = self.goal_slot_poses(oid)
        if not slots:
            return True
        usable = {pl.slot for pl in self.place_options(oid, grasp_angle)
                  if pl.mask == 0}
        return len(usable) == 0

    def innocuous_goal_exists(self, oid: str, grasp_angle: float,
                              misplaced: list[str]) -> bool:
        """Some goal slot is clear to place at and would not raise any other
        misplaced object's blockage (the I feature)."""
        radius = self.task.object_by_id(oid).radius
        baseline = {k: self.alpha(k) for k in misplaced if k in self.board}
        for pl in self.place_options(oid, grasp_angle):
            if pl.mask != 0:
                continue
            ok = True
            for k, a0 in baseline.items():
                if self.alpha(k, extra=(pl.pose, radius)) > a0:
                    ok = False
                    break
            if ok:
                return True
        return False


class FeatureEvaluator:
    """Computes FeatureVec values for states of one subproblem, caching the
    corridor tables per board arrangement."""

    def __init__(self, task: Task, samples: SampleSet):
        self.task = task
        self.samples = samples
        self._contexts: dict[tuple, BoardContext] = {}

    def context(self, state: WorldState) -> BoardContext:
        key = tuple(sorted((oid, p.x, p.y) for oid, p in state.object_poses.items()))
        ctx = self._contexts.get(key)
        if ctx is None:
            ctx = BoardContext(self.task, self.samples, dict(state.object_poses))
            self._contexts[key] = ctx
        return ctx

    def misplaced(self, state: WorldState) -> tuple[list[str], bool]:
        """(misplaced object ids, held-object-is-misplaced flag)."""
        std = misplaced_standing(state, self.task)
        held_mis = False
        if state.held is not None:
            oid, g = state.held
            obj = self.task.object_by_id(oid)
            if not isinstance(obj.goal, GoalNone):
                held_mis = self.context(state).held_goal_blocked(oid, g)
        out = list(std)
        if held_mis:
            out.append(state.held[0])
        return out, held_mis

    def features(self, state: WorldState) -> FeatureVec:
        ctx = self.context(state)
        std = misplaced_standing(state, self.task)
        H = state.held is not None
        I = False
        held_mis = False
        if H:
            oid, g = state.held
            obj = self.task.object_by_id(oid)
            if not isinstance(obj.goal, GoalNone):
                held_mis = ctx.held_goal_blocked(oid, g)
                I = ctx.innocuous_goal_exists(oid, g, std)
        members = list(std) + ([state.held[0]] if held_mis else [])
        m = len(members)
        if m == 0:
            return FeatureVec(H, I, 0, 0, 0)
        u = BLOCK_INF
        v = 0
        for k in members:
            if k in state.object_poses:
                a = ctx.alpha(k)
            else:
                a = ctx.alpha_held(k, state.held[1])
            b = ctx.beta(k, std)
            u = min(u, min(a + b, BLOCK_INF))
            v = min(v + a, BLOCK_INF)
        return FeatureVec(H, I, m, u, v)


def compute_features(state: WorldState, samples: SampleSet, task: Task) -> FeatureVec:
    """One-shot feature computation (tests and tooling); the planner keeps a
    FeatureEvaluator per subproblem instead."""
    return FeatureEvaluator(task, samples).features(state)


def blocking_counts(state: WorldState, obj_id: str, samples: SampleSet,
                    task: Task) -> tuple[int, int]:
    """(alpha, beta) of one misplaced object."""
    ev = FeatureEvaluator(task, samples)
    ctx = ev.context(state)
    std = misplaced_standing(state, task)
    if obj_id in state.object_poses:
        a = ctx.alpha(obj_id)
    else:
        a = ctx.alpha_held(obj_id, state.held[1])
    return a, ctx.beta(obj_id, std)
