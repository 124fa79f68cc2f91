"""Per-subproblem sampling of placements, base locations, grasps and the base
roadmap, plus grounding of pick / place / move actions over the samples.

Sampling is greedy maximin: each new pose is the best of a fixed candidate
batch by minimum distance to everything already placed, which approximates
uniform coverage while staying deterministic under a seeded generator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .geometry import Pose2, Rect, grasp_compatible
from .world import (GoalNone, GoalPose, GoalRegion, GoalWordSlot, Table, Task,
                    WorldState, words_valid_prefix, WORD_PITCH_RADII,
                    WORD_MARGIN_RADII)

CANDIDATE_BATCH = 32
RETRY_FACTOR = 10
GOAL_SAMPLES_PER_ROUND = 3

PLACEMENT_CAP = 200
BASE_CAP = 64
GRASP_CAP = 16
ESCALATION_MAX = 8


class SamplingExhausted(Exception):
    """Could not find enough collision-free samples; caller should escalate."""


class DensityCapReached(Exception):
    """Escalation budget spent; the planner reports failure for this run."""


@dataclass(frozen=True)
class SamplingDensity:
    n_bases: int = 10
    n_placements_per_table: int = 10
    n_grasps: int = 4
    n_sops: int = 1
    attempt: int = 0

    def __post_init__(self):
        if min(self.n_bases, self.n_placements_per_table, self.n_grasps, self.n_sops) < 1:
            raise ValueError("sampling counts must be >= 1")


def escalate(density: SamplingDensity, escalation_max: int = ESCALATION_MAX,
             uncapped: bool = False) -> SamplingDensity:
    """One escalation round: more placements, more bases, more grasps."""
    if not uncapped and density.attempt >= escalation_max:
        raise DensityCapReached(f"escalation budget of {escalation_max} spent")
    placements = math.ceil(1.5 * density.n_placements_per_table)
    bases = math.ceil(1.25 * density.n_bases)
    grasps = density.n_grasps + 2
    if not uncapped:
        placements = min(placements, PLACEMENT_CAP)
        bases = min(bases, BASE_CAP)
        grasps = min(grasps, GRASP_CAP)
    return replace(density, n_placements_per_table=placements, n_bases=bases,
                   n_grasps=grasps, attempt=density.attempt + 1)


@dataclass(frozen=True)
class Pick:
    base: int
    obj: str
    grasp: int


@dataclass(frozen=True)
class Place:
    base: int
    obj: str
    table: str
    slot: int  # index into SampleSet.placements[table]
    sop: int = 0


@dataclass(frozen=True)
class MoveBase:
    src: int
    dst: int


GroundAction = Pick | Place | MoveBase

PlacementRef = tuple[str, int]


@dataclass(frozen=True)
class SampleSet:
    """One subproblem's discretization of the continuous scene."""

    bases: tuple[Pose2, ...]
    placements: dict[str, tuple[Pose2, ...]]
    grasps: tuple[float, ...]
    roadmap: dict[int, tuple[int, ...]]
    seed: tuple[int, ...]
    # derived bookkeeping
    object_refs: dict[str, PlacementRef]         # standing object -> its pose slot
    goal_refs: dict[str, tuple[PlacementRef, ...]]  # goal object -> candidate goal slots

    def placement_pose(self, ref: PlacementRef) -> Pose2:
        return self.placements[ref[0]][ref[1]]

    def nearest_base(self, pose: Pose2) -> int:
        d = [pose.dist(b) for b in self.bases]
        return int(np.argmin(d))


def _uniform_in_rect(rect: Rect, rng: np.random.Generator, n: int) -> np.ndarray:
    xs = rng.uniform(rect.x_min, rect.x_max, size=n)
    ys = rng.uniform(rect.y_min, rect.y_max, size=n)
    return np.stack([xs, ys], axis=1)


def sample_placements(table: Table, k: int, fixed: list[Pose2],
                      obstacles: list[tuple[float, float, float]],
                      rng: np.random.Generator, radius: float,
                      region: Rect | None = None,
                      accept=None) -> list[Pose2]:
    """`fixed` followed by k maximin-sampled collision-free poses.

    Each accepted pose is the candidate (out of a batch of 32 uniform draws in
    the table rect, inset by `radius`) that maximizes the minimum distance to
    all prior placements and to the obstacle discs. Obstacles are
    (x, y, radius) triples; `accept` optionally vetoes candidates (used to
    keep goal samples reachable). Raises SamplingExhausted after 32*k*10
    draws fail to produce a collision-free batch.
    """
    if region is not None:
        inner = region  # a goal region bounds disc centers, not the disc
    elif table.rect.hx > radius and table.rect.hy > radius:
        inner = table.rect.shrunk(radius)
    else:
        inner = None
    if inner is None:
        if k > 0:
            raise SamplingExhausted("table smaller than object radius")
        return list(fixed)
    chosen: list[Pose2] = list(fixed)
    obs = np.array([(o[0], o[1]) for o in obstacles], dtype=float).reshape(-1, 2)
    obs_r = np.array([o[2] for o in obstacles], dtype=float)
    budget = CANDIDATE_BATCH * max(k, 1) * RETRY_FACTOR
    drawn = 0
    for _ in range(k):
        best: Pose2 | None = None
        best_score = -1.0
        while best is None:
            if drawn >= budget:
                raise SamplingExhausted(
                    f"no free placement after {drawn} draws (table crowded)")
            cand = _uniform_in_rect(inner, rng, CANDIDATE_BATCH)
            drawn += CANDIDATE_BATCH
            for x, y in cand:
                if not table.rect.contains_disc(float(x), float(y), radius):
                    continue
                if obs.size and np.any(np.hypot(obs[:, 0] - x, obs[:, 1] - y)
                                       < obs_r + radius - 1e-9):
                    continue
                pose = Pose2(float(x), float(y), 0.0)
                if accept is not None and not accept(pose):
                    continue
                dmin = math.inf
                if obs.size:
                    dmin = float(np.min(np.hypot(obs[:, 0] - x, obs[:, 1] - y)))
                for p in chosen:
                    dmin = min(dmin, math.hypot(p.x - x, p.y - y))
                if dmin > best_score:
                    best_score = dmin
                    best = pose
        chosen.append(best)
    return chosen


def _band_contains(task: Task, x: float, y: float) -> bool:
    """Point is within arm reach of some table, with the base disc off every
    table and fully inside the arena."""
    br = task.robot.base_radius
    if not task.arena.contains_disc(x, y, br):
        return False
    near = False
    for t in task.tables:
        d = t.rect.dist_to_point(x, y)
        if d < br - 1e-12:  # base disc would overlap the table
            return False
        if d <= task.robot.reach_max:
            near = True
    return near


def _table_edge_segments(task: Task, max_len: float) -> list[tuple[float, float, float, float]]:
    """Each table boundary cut into segments no longer than max_len."""
    segs = []
    for t in task.tables:
        r = t.rect
        corners = [(r.x_min, r.y_min), (r.x_max, r.y_min),
                   (r.x_max, r.y_max), (r.x_min, r.y_max)]
        for i in range(4):
            ax, ay = corners[i]
            bx, by = corners[(i + 1) % 4]
            length = math.hypot(bx - ax, by - ay)
            n = max(1, math.ceil(length / max_len))
            for j in range(n):
                t0, t1 = j / n, (j + 1) / n
                segs.append((ax + (bx - ax) * t0, ay + (by - ay) * t0,
                             ax + (bx - ax) * t1, ay + (by - ay) * t1))
    return segs


def _coverage_targets(task: Task) -> list[tuple[float, float]]:
    """Poses the base set must be able to reach: every starting object pose
    and every goal anchor (exact goal poses, goal region extents)."""
    pts = [(p.x, p.y) for p in task.start.object_poses.values()]
    for obj in task.objects:
        g = obj.goal
        if isinstance(g, GoalPose):
            pts.append((g.pose.x, g.pose.y))
        elif isinstance(g, GoalRegion):
            r = g.rect
            pts.append((r.cx, r.cy))
            pts.extend([(r.x_min, r.y_min), (r.x_max, r.y_min),
                        (r.x_max, r.y_max), (r.x_min, r.y_max)])
    return pts


def _seg_dist(seg, x, y) -> float:
    ax, ay, bx, by = seg
    vx, vy = bx - ax, by - ay
    L2 = vx * vx + vy * vy
    t = 0.0 if L2 == 0 else min(1.0, max(0.0, ((x - ax) * vx + (y - ay) * vy) / L2))
    return math.hypot(x - (ax + t * vx), y - (ay + t * vy))


def _useful_offset_cap(task: Task) -> float:
    """Bases farther from a table edge than this cannot reach over the table
    interior, so sampling concentrates inside it. Upper-bounded by reach_max
    (the band the reach constraint defines)."""
    depth = max(min(t.rect.hx, t.rect.hy) for t in task.tables)
    cap = task.robot.reach_max - depth
    return max(cap, task.robot.base_radius + 0.05)


def _perimeter_point(rect: Rect, t: float) -> tuple[float, float, float, float]:
    """Point on the rectangle boundary at parameter t in [0,1) plus its
    outward normal."""
    w, h = 2 * rect.hx, 2 * rect.hy
    per = 2 * (w + h)
    d = t * per
    if d < w:
        return rect.x_min + d, rect.y_min, 0.0, -1.0
    d -= w
    if d < h:
        return rect.x_max, rect.y_min + d, 1.0, 0.0
    d -= h
    if d < w:
        return rect.x_max - d, rect.y_max, 0.0, 1.0
    d -= w
    return rect.x_min, rect.y_max - d, -1.0, 0.0


def sample_bases(task: Task, k: int, rng: np.random.Generator) -> list[Pose2]:
    """k base poses hugging the table edges, the start base always first.

    Samples are drawn per (table, boundary point, outward offset) so they
    land in the part of the reach band from which the arm can actually span
    the table interior. A retry loop then replaces redundant bases until
    every table edge segment has a base close enough to serve it (best
    effort when k is too small to cover them all).
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    bases = [task.start.base]
    cap = _useful_offset_cap(task)
    lo = task.robot.base_radius + 0.01
    budget = CANDIDATE_BATCH * max(k, 1) * RETRY_FACTOR

    def draw_near(rect: Rect) -> Pose2 | None:
        nonlocal budget
        while budget > 0:
            budget -= 1
            px, py, nx, ny = _perimeter_point(rect, float(rng.uniform()))
            off = float(rng.uniform(lo, max(cap, lo + 1e-6)))
            x, y = px + nx * off, py + ny * off
            if _band_contains(task, x, y):
                return Pose2(x, y, 0.0)
        return None

    order = [t.rect for t in task.tables]
    while len(bases) < k:
        rect = order[(len(bases) - 1) % len(order)]
        p = draw_near(rect)
        if p is None:
            raise SamplingExhausted("no valid base pose found in the reach band")
        bases.append(p)

    def replace_redundant(pose: Pose2) -> None:
        nn = [min(b.dist(o) for j, o in enumerate(bases) if j != i)
              for i, b in enumerate(bases)]
        nn[0] = math.inf  # never drop the start base
        bases[int(np.argmin(nn))] = pose

    # coverage repair, two passes over replaceable bases:
    # 1. every table edge segment wants a base close enough to reach over it
    # 2. every start object pose and goal anchor wants a base in whose reach
    #    annulus it falls (edges hugging arena walls may be unservable and
    #    are skipped; targets deep in wall pockets keep their narrow window)
    rmin, rmax = task.robot.reach_min, task.robot.reach_max
    if len(bases) >= 2:
        segs = _table_edge_segments(task, cap)
        for _ in range(4):
            uncovered = [s for s in segs
                         if all(_seg_dist(s, b.x, b.y) > cap + 1e-9 for b in bases)]
            any_placed = False
            for s in uncovered:
                for _ in range(CANDIDATE_BATCH):
                    t = float(rng.uniform())
                    mx = s[0] + (s[2] - s[0]) * t
                    my = s[1] + (s[3] - s[1]) * t
                    ang = rng.uniform(-math.pi, math.pi)
                    rad = rng.uniform(lo, cap)
                    x, y = mx + rad * math.cos(ang), my + rad * math.sin(ang)
                    if _band_contains(task, x, y) and _seg_dist(s, x, y) <= cap:
                        replace_redundant(Pose2(x, y, 0.0))
                        any_placed = True
                        break
            if not any_placed:
                break
        for _ in range(4):
            targets = [p for p in _coverage_targets(task)
                       if all(not (rmin <= math.hypot(b.x - p[0], b.y - p[1]) <= rmax * 0.97)
                              for b in bases)]
            any_placed = False
            for (tx, ty) in targets:
                for _ in range(CANDIDATE_BATCH * 2):
                    ang = rng.uniform(-math.pi, math.pi)
                    rad = rng.uniform(rmin + 0.05, rmax * 0.95)
                    x, y = tx + rad * math.cos(ang), ty + rad * math.sin(ang)
                    if _band_contains(task, x, y):
                        replace_redundant(Pose2(x, y, 0.0))
                        any_placed = True
                        break
            if not any_placed:
                break

    # headings face the nearest table (cosmetic, used by the renderer)
    out = []
    for b in bases:
        t = min(task.tables, key=lambda tb: tb.rect.dist_to_point(b.x, b.y))
        out.append(Pose2(b.x, b.y, math.atan2(t.rect.cy - b.y, t.rect.cx - b.x)))
    out[0] = task.start.base
    return out


def build_roadmap(bases: list[Pose2], tables=None, arena=None) -> dict[int, tuple[int, ...]]:
    """Connect base pairs within d_max = 2x mean nearest-neighbor distance,
    doubling d_max until the graph is connected. Symmetric adjacency.

    Edges are not collision-checked here; the motion stage validates them
    lazily, so `tables` and `arena` are accepted for interface parity only.
    """
    n = len(bases)
    if n == 1:
        return {0: ()}
    d = np.array([[bases[i].dist(bases[j]) for j in range(n)] for i in range(n)])
    nn = np.array([min(d[i][j] for j in range(n) if j != i) for i in range(n)])
    d_max = 2.0 * float(np.mean(nn))

    def edges_for(dmax: float) -> dict[int, tuple[int, ...]]:
        adj = {i: tuple(j for j in range(n) if j != i and d[i][j] <= dmax)
               for i in range(n)}
        return adj

    def connected(adj) -> bool:
        seen = {0}
        stack = [0]
        while stack:
            i = stack.pop()
            for j in adj[i]:
                if j not in seen:
                    seen.add(j)
                    stack.append(j)
        return len(seen) == n

    adj = edges_for(d_max)
    while not connected(adj):
        d_max *= 2.0
        adj = edges_for(d_max)
    return adj


def grasp_angles(n: int) -> tuple[float, ...]:
    """n approach angles evenly tiling [-pi, pi)."""
    return tuple((-math.pi + (2.0 * math.pi * i) / n) for i in range(n))


def build_samples(task: Task, state: WorldState, density: SamplingDensity,
                  bases: list[Pose2], roadmap: dict[int, tuple[int, ...]],
                  rng: np.random.Generator, seed_tag: tuple[int, ...]) -> SampleSet:
    """Assemble a SampleSet for a subproblem starting at `state`.

    Placements per table: standing object poses first, then goal samples,
    then maximin free-space samples. Goal samples per object are recorded in
    goal_refs; 3 per escalation round for region goals.
    """
    radius = task.max_object_radius()
    radii = {o.id: o.radius for o in task.objects}
    object_refs: dict[str, PlacementRef] = {}
    goal_refs: dict[str, list[PlacementRef]] = {o.id: [] for o in task.objects
                                                if not isinstance(o.goal, GoalNone)}
    placements: dict[str, list[Pose2]] = {t.id: [] for t in task.tables}

    def table_of(pose: Pose2) -> str:
        for t in task.tables:
            if t.rect.contains_point(pose.x, pose.y):
                return t.id
        # standing objects always lie on a table per the state invariants
        raise ValueError("pose on no table")

    def add(table_id: str, pose: Pose2) -> PlacementRef:
        placements[table_id].append(pose)
        return (table_id, len(placements[table_id]) - 1)

    for oid in state.standing_ids():
        pose = state.object_poses[oid]
        object_refs[oid] = add(table_of(pose), pose)

    obstacles = [(p.x, p.y, radii[oid]) for oid, p in state.object_poses.items()]
    n_goal = GOAL_SAMPLES_PER_ROUND * (density.attempt + 1)
    grasps = grasp_angles(density.n_grasps)

    rmin, rmax = task.robot.reach_min, task.robot.reach_max

    def reachable_grasps(pose: Pose2) -> set[float]:
        """Grasp angles that some in-reach base can approach the pose with."""
        out = set()
        for b in bases:
            if rmin <= b.dist(pose) <= rmax:
                for g in grasps:
                    if grasp_compatible(b, pose, g):
                        out.add(g)
        return out

    def usable(pose: Pose2, allowed: set[float] | None) -> bool:
        """Some base can reach the pose with an allowed grasp. Conditioning
        goal samples on the grasps that can also pick the object keeps the
        pick/place grasp-consistency requirement satisfiable."""
        for b in bases:
            if not (rmin <= b.dist(pose) <= rmax):
                continue
            gs = grasps if allowed is None else allowed
            if any(grasp_compatible(b, pose, g) for g in gs):
                return True
        return False

    word_slots = (_word_slot_poses(task, state, rng, n_goal, usable)
                  if task.family == "words" else {})

    for obj in task.objects:
        g = obj.goal
        if isinstance(g, GoalNone):
            continue
        if state.held and state.held[0] == obj.id:
            allowed = {state.held[1]}
        elif obj.id in state.object_poses:
            allowed = reachable_grasps(state.object_poses[obj.id]) or None
        else:
            allowed = None
        if isinstance(g, GoalPose):
            t = table_of(g.pose)
            goal_refs[obj.id].append(add(t, g.pose))
        elif isinstance(g, GoalRegion):
            t = next(tb.id for tb in task.tables
                     if tb.rect.contains_point(g.rect.cx, g.rect.cy))
            ignore = [(o[0], o[1], o[2]) for o in obstacles]
            try:
                poses = sample_placements(task.table_by_id(t), n_goal, [],
                                          ignore, rng, obj.radius, region=g.rect,
                                          accept=lambda p: usable(p, allowed))
            except SamplingExhausted:
                poses = []
            for p in poses:
                goal_refs[obj.id].append(add(t, p))
        elif isinstance(g, GoalWordSlot):
            for p in word_slots.get(obj.id, []):
                goal_refs[obj.id].append(add(task.tables[0].id, p))

    for t in task.tables:
        try:
            poses = sample_placements(t, density.n_placements_per_table, [],
                                      obstacles, rng, radius)
        except SamplingExhausted:
            poses = []  # crowded table: rely on object/goal slots
        for p in poses:
            add(t.id, p)

    return SampleSet(
        bases=tuple(bases),
        placements={k: tuple(v) for k, v in placements.items()},
        grasps=grasp_angles(density.n_grasps),
        roadmap=roadmap,
        seed=seed_tag,
        object_refs=object_refs,
        goal_refs={k: tuple(v) for k, v in goal_refs.items()},
    )


def _word_slot_poses(task: Task, state: WorldState, rng: np.random.Generator,
                     n_anchor: int, usable) -> dict[str, list[Pose2]]:
    """Candidate goal poses for word blocks given the current valid prefix.

    With a prefix placed, remaining slots are exact poses at the pitch from
    the anchor. With no prefix, candidate anchor poses for the first letter
    are maximin-sampled where the whole word still fits and every implied
    slot stays reachable.
    """
    word = task.word or ""
    radius = task.max_object_radius()
    pitch = WORD_PITCH_RADII * radius
    margin = WORD_MARGIN_RADII * radius
    table = task.tables[0]
    prefix = words_valid_prefix(state, task)
    out: dict[str, list[Pose2]] = {}
    letters_of = {o.id: o.label for o in task.objects}

    if prefix:
        anchor = state.object_poses[prefix[0][0]]
        filled = len(prefix)
        for oid, label in letters_of.items():
            if oid in state.object_poses and any(oid == p[0] for p in prefix):
                continue
            slots = [k for k in range(filled, len(word)) if word[k] == label]
            if slots:
                out[oid] = [Pose2(anchor.x + k * pitch, anchor.y, 0.0) for k in slots]
        return out

    # no prefix: anchors for first-letter blocks; the whole implied row must
    # be reachable or the word could never be finished from that anchor
    span = (len(word) - 1) * pitch
    inner = table.rect.shrunk(margin)
    anchor_region = Rect((inner.x_min + (inner.x_max - span)) / 2.0, inner.cy,
                         max((inner.x_max - span - inner.x_min) / 2.0, 1e-6),
                         max(inner.hy, 1e-6))
    obstacles = [(p.x, p.y, task.object_by_id(oid).radius)
                 for oid, p in state.object_poses.items()]

    def row_reachable(p: Pose2) -> bool:
        return all(usable(Pose2(p.x + k * pitch, p.y, 0.0), None)
                   for k in range(len(word)))

    try:
        anchors = sample_placements(table, n_anchor, [], obstacles, rng, radius,
                                    region=anchor_region, accept=row_reachable)
    except SamplingExhausted:
        anchors = []
    first = word[0]
    for oid, label in letters_of.items():
        if label == first:
            out[oid] = list(anchors)
    return out


def ground_actions(state: WorldState, samples: SampleSet, task: Task) -> list[GroundAction]:
    """All grounded actions relevant in `state`; no executability checks.

    Picks over standing objects x grasps x bases when nothing is held; places
    of the held object over all placements x bases; move-base actions along
    roadmap edges incident to the base nearest the current base pose.
    """
    out: list[GroundAction] = []
    if state.held is None:
        for oid in state.standing_ids():
            for gi in range(len(samples.grasps)):
                for bi in range(len(samples.bases)):
                    out.append(Pick(base=bi, obj=oid, grasp=gi))
    else:
        oid = state.held[0]
        for table_id in sorted(samples.placements):
            for slot in range(len(samples.placements[table_id])):
                for bi in range(len(samples.bases)):
                    out.append(Place(base=bi, obj=oid, table=table_id, slot=slot))
    here = samples.nearest_base(state.base)
    for nb in samples.roadmap.get(here, ()):
        out.append(MoveBase(src=here, dst=nb))
    return out
