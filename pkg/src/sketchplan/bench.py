"""Deterministic benchmark scene generators: sorting, non-monotonic, words.

Physical defaults: tables 1.0 x 0.8 m on a 6 x 6 m arena, disc objects of
radius 0.035 m, base radius 0.25 m, arm reach annulus 0.2..0.85 m. Clutter
maps to a minimum center spacing at generation time (low 4r, medium 3r,
high 2.2r).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .features import blocking_counts
from .geometry import Pose2, Rect
from .rng import derive_rng
from .sampling import SamplingDensity, build_roadmap, build_samples, sample_bases
from .world import (GoalNone, GoalPose, GoalRegion, GoalWordSlot, MovableObject,
                    RobotParams, Table, Task, WorldState, check_state_invariants,
                    misplaced_standing, WORD_PITCH_RADII, WORD_MARGIN_RADII)

ARENA = Rect(0.0, 0.0, 3.0, 3.0)
TABLE_HX, TABLE_HY = 0.5, 0.4
OBJECT_RADIUS = 0.035
ROBOT = RobotParams(base_radius=0.25, reach_min=0.2, reach_max=0.85)

CLUTTER_SPACING = {"low": 4.0, "medium": 3.0, "high": 2.2}  # in radii


class GenerationFailed(Exception):
    """No valid scene found within the retry budget."""


@dataclass(frozen=True)
class BenchSpec:
    family: str                    # "sorting" | "nonmonotonic" | "words"
    n_tables: int = 2
    n_goal_objects: int = 2
    n_obstacle_objects: int = 0
    clutter: str = "medium"
    seed: int = 0
    word: Optional[str] = None

    def __post_init__(self):
        if self.n_tables < 1 or self.n_goal_objects < 0 or self.n_obstacle_objects < 0:
            raise ValueError("counts must be non-negative (tables >= 1)")
        if self.clutter not in CLUTTER_SPACING:
            raise ValueError(f"unknown clutter level {self.clutter!r}")
        if self.family == "words" and not self.word:
            raise ValueError("words family needs a word")


def generate(spec: BenchSpec) -> Task:
    if spec.family == "sorting":
        return gen_sorting(spec)
    if spec.family == "nonmonotonic":
        return gen_nonmonotonic(spec)
    if spec.family == "words":
        return gen_words(spec)
    raise ValueError(f"unknown family {spec.family!r}")


def _table_layout(n: int) -> list[Table]:
    """Tables spread left-to-right (ring offsets for 3+) with navigable gaps."""
    slots = {
        1: [(0.0, 0.0)],
        2: [(-1.5, 0.0), (1.5, 0.0)],
        3: [(-1.8, -0.9), (0.0, 1.2), (1.8, -0.9)],
        4: [(-1.8, -1.2), (-1.8, 1.2), (1.8, 1.2), (1.8, -1.2)],
    }
    if n not in slots:
        raise ValueError("1..4 tables supported")
    out = []
    for i, (cx, cy) in enumerate(sorted(slots[n])):
        out.append(Table(f"table{i}", Rect(cx, cy, TABLE_HX, TABLE_HY)))
    return out


def _start_base(tables: list[Table]) -> Pose2:
    """A spot between the tables, clear of all of them."""
    for y in (0.0, -2.0, 2.0):
        pose = Pose2(0.0, y, 0.0)
        if all(t.rect.dist_to_point(pose.x, pose.y) >= ROBOT.base_radius
               for t in tables):
            return pose
    raise GenerationFailed("no free start base")


def _scatter(rng, table: Table, n: int, spacing: float,
             existing: list[tuple[float, float]],
             forbidden: list[Rect] = (), tries: int = 4000) -> list[Pose2]:
    """n poses on the table with pairwise center spacing, avoiding regions."""
    inner = table.rect.shrunk(OBJECT_RADIUS * 1.5)
    out: list[Pose2] = []
    pts = list(existing)
    for _ in range(tries):
        if len(out) == n:
            break
        x = float(rng.uniform(inner.x_min, inner.x_max))
        y = float(rng.uniform(inner.y_min, inner.y_max))
        if any(r.contains_point(x, y) for r in forbidden):
            continue
        if all(math.hypot(x - px, y - py) >= spacing for px, py in pts):
            out.append(Pose2(x, y, 0.0))
            pts.append((x, y))
    if len(out) < n:
        raise GenerationFailed(
            f"could not scatter {n} objects at spacing {spacing:.3f}")
    return out


def gen_sorting(spec: BenchSpec) -> Task:
    """Color sorting: blue objects belong on the leftmost table, green on the
    rightmost (left / right halves when there is a single table); red objects
    are goal-free obstacles. Goal objects start misplaced."""
    rng = derive_rng(spec.seed, "gen", spec.family)
    tables = _table_layout(spec.n_tables)
    spacing = CLUTTER_SPACING[spec.clutter] * OBJECT_RADIUS

    if spec.n_tables == 1:
        t = tables[0].rect
        blue_rect = Rect(t.cx - t.hx / 2, t.cy, t.hx / 2, t.hy)
        green_rect = Rect(t.cx + t.hx / 2, t.cy, t.hx / 2, t.hy)
    else:
        blue_rect = tables[0].rect
        green_rect = tables[-1].rect

    n_blue = (spec.n_goal_objects + 1) // 2
    n_green = spec.n_goal_objects - n_blue

    for attempt in range(100):
        objects: list[MovableObject] = []
        poses: dict[str, Pose2] = {}
        try:
            specs = ([("blue", GoalRegion(blue_rect))] * n_blue
                     + [("green", GoalRegion(green_rect))] * n_green
                     + [("red", GoalNone())] * spec.n_obstacle_objects)
            for i, (color, goal) in enumerate(specs):
                oid = f"{color}{i}"
                # goal objects must start misplaced: keep them out of the goal
                forbidden = [goal.rect] if isinstance(goal, GoalRegion) else []
                table = tables[i % len(tables)]
                if isinstance(goal, GoalRegion) and len(tables) > 1:
                    # never start a goal object on its own goal table
                    candidates = [t for t in tables if t.rect != goal.rect]
                    table = candidates[i % len(candidates)]
                pose = _scatter(rng, table, 1, spacing,
                                [(p.x, p.y) for p in poses.values()],
                                forbidden)[0]
                objects.append(MovableObject(oid, OBJECT_RADIUS, color, goal))
                poses[oid] = pose
            task = Task(ARENA, tuple(tables), tuple(objects), ROBOT,
                        WorldState(_start_base(tables), None, poses),
                        "sorting")
            check_state_invariants(task, task.start)
            mis = set(misplaced_standing(task.start, task))
            want = {o.id for o in objects if not isinstance(o.goal, GoalNone)}
            if mis == want:
                return task
        except GenerationFailed:
            pass
    raise GenerationFailed("sorting scene generation exhausted retries")


def gen_nonmonotonic(spec: BenchSpec) -> Task:
    """Three green objects must cross from one corner table to goal spots on
    the other; each green (and each goal spot) sits deep in a corner pocket
    whose only reachable approach window is frontal, and a red (blue) guard
    disc sits in that window. Guards carry exact-pose goals equal to their
    start, which forces move-away-and-return plans."""
    rng = derive_rng(spec.seed, "gen", spec.family)
    r = OBJECT_RADIUS
    # tables in the south corners: the arena wall closes the back and side,
    # so deep rows are reachable only through a narrow frontal window
    left = Table("table0", Rect(ARENA.x_min + TABLE_HX + 0.05,
                                ARENA.y_min + TABLE_HY + 0.05, TABLE_HX, TABLE_HY))
    right = Table("table1", Rect(ARENA.x_max - TABLE_HX - 0.05,
                                 ARENA.y_min + TABLE_HY + 0.05, TABLE_HX, TABLE_HY))
    tables = [left, right]

    n_green = 3
    n_red = 4
    n_blue = max(spec.n_goal_objects - n_green - n_red, 0) or 3
    guard_gap = 2.4 * r          # guard disc this far in front of its ward
    row_step = 3.2 * r           # spacing along the row
    depth = 0.30                 # row distance from the wall-side edge

    for attempt in range(100):
        jitter = rng.uniform(-0.1 * r, 0.1 * r, size=64)
        ji = iter(jitter)

        def j() -> float:
            return float(next(ji))

        gy = left.rect.y_min + depth
        green_row = [Pose2(left.rect.x_min + 0.15 + i * row_step + j(), gy + j(), 0.0)
                     for i in range(n_green)]
        spot_row = [Pose2(right.rect.x_max - 0.15 - i * row_step, gy, 0.0)
                    for i in range(n_green)]

        poses: dict[str, Pose2] = {}
        for i, p in enumerate(green_row):
            poses[f"green{i}"] = p
        for i, p in enumerate(green_row):
            poses[f"red{i}"] = Pose2(p.x + j(), p.y + guard_gap, 0.0)
        # extra reds idle on the open side of the table
        for i in range(n_green, n_red):
            poses[f"red{i}"] = Pose2(left.rect.x_max - 0.2 - (i - n_green) * 4 * r + j(),
                                     gy + j(), 0.0)
        for i, p in enumerate(spot_row[:n_blue]):
            poses[f"blue{i}"] = Pose2(p.x + j(), p.y + guard_gap, 0.0)
        for i in range(n_green, n_blue):
            poses[f"blue{i}"] = Pose2(right.rect.x_min + 0.2 + (i - n_green) * 4 * r + j(),
                                      gy + j(), 0.0)

        tol = 0.5 * r
        objects: list[MovableObject] = []
        for i in range(n_green):
            objects.append(MovableObject(
                f"green{i}", r, "green",
                GoalRegion(Rect(spot_row[i].x, spot_row[i].y, 1.4 * r, 0.8 * r))))
        for i in range(n_red):
            objects.append(MovableObject(f"red{i}", r, "red",
                                         GoalPose(poses[f"red{i}"], tol)))
        for i in range(n_blue):
            objects.append(MovableObject(f"blue{i}", r, "blue",
                                         GoalPose(poses[f"blue{i}"], tol)))
        try:
            task = Task(ARENA, tuple(tables), tuple(objects), ROBOT,
                        WorldState(_start_base(tables), None, poses),
                        "nonmonotonic")
            check_state_invariants(task, task.start)
        except Exception:
            continue
        if set(misplaced_standing(task.start, task)) != {f"green{i}" for i in range(n_green)}:
            continue
        if _nonmono_obstructed(task):
            return task
    raise GenerationFailed("non-monotonic scene generation exhausted retries")


def _nonmono_obstructed(task: Task) -> bool:
    """Every green must be blocked but reachable (0 < alpha < inf) at start
    with a generous sampling of bases and grasps."""
    from .sketch import BLOCK_INF
    density = SamplingDensity(n_bases=16, n_grasps=12)
    rng = derive_rng(0, "gen-verify")
    bases = sample_bases(task, density.n_bases, rng)
    roadmap = build_roadmap(bases)
    samples = build_samples(task, task.start, density, bases, roadmap, rng, (0,))
    for oid in misplaced_standing(task.start, task):
        alpha, _ = blocking_counts(task.start, oid, samples, task)
        if not (1 <= alpha < BLOCK_INF):
            return False
    return True


def gen_words(spec: BenchSpec) -> Task:
    """Letter blocks scattered on one snug table; blocks whose letter occurs
    in the target word carry word-slot goals. The table is sized so the word
    row spans most of its width, which keeps free space scarce."""
    rng = derive_rng(spec.seed, "gen", spec.family)
    word = spec.word.upper()
    r = OBJECT_RADIUS
    pitch = WORD_PITCH_RADII * r
    margin = WORD_MARGIN_RADII * r
    span = (len(word) - 1) * pitch + 2 * (margin + r)
    hx = (span / 0.70) / 2.0
    hy = max(0.18, hx * 0.62)
    table = Table("table0", Rect(0.0, 1.8, hx, hy))
    tables = [table]

    n_total = 11
    distractor_letters = [c for c in "XQZJKVWYFDG" if c not in word]
    letters = list(word)
    while len(letters) < n_total:
        letters.append(distractor_letters[(len(letters) - len(word))
                                          % len(distractor_letters)])

    spacing = CLUTTER_SPACING[spec.clutter] * r
    for attempt in range(100):
        try:
            poses_list = _scatter(rng, table, n_total, spacing, [])
        except GenerationFailed:
            spacing = max(spacing * 0.92, 2.05 * r)
            continue
        objects = []
        poses = {}
        for i, letter in enumerate(letters):
            oid = f"blk{i}_{letter}"
            goal = GoalWordSlot(word.index(letter)) if letter in word else GoalNone()
            objects.append(MovableObject(oid, r, letter, goal))
            poses[oid] = poses_list[i]
        task = Task(ARENA, tuple(tables), tuple(objects), ROBOT,
                    WorldState(_start_base(tables), None, poses),
                    "words", word=word)
        try:
            check_state_invariants(task, task.start)
        except Exception:
            continue
        # all goal blocks must start misplaced (no accidental valid prefix)
        mis = set(misplaced_standing(task.start, task))
        want = {o.id for o in objects if not isinstance(o.goal, GoalNone)}
        if mis == want:
            return task
    raise GenerationFailed("words scene generation exhausted retries")
