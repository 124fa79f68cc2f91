"""Width-based subproblem search with lazy action validation.

The search graph keeps every discovered parent of a node (edges are
provisional until a candidate plan is walked backward and each edge is fully
validated). When a provisional edge turns out infeasible it is removed; nodes
that lose their last live parent become orphans, their novelty support is
retracted, and pruned nodes that should have been novel are recovered to the
front of the queue. Chains already validated toward a goal are tagged so a
rediscovery can reuse them.

The outer loop serializes the task into sketch subgoals and escalates the
sampling density of a subproblem that fails.
"""

from __future__ import annotations

import heapq
import itertools
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Optional

from .features import FeatureEvaluator
from .rng import derive_rng
from .sampling import (DensityCapReached, MoveBase, SampleSet, SamplingDensity,
                       build_roadmap, build_samples, escalate, ground_actions,
                       sample_bases)
from .sketch import (FeatureVec, NoApplicableRule, Sketch, active_rule,
                     check_termination, pair_satisfies)
from .validation import (Feasible, Infeasible, PipelineStats,
                         ProvisionallyFeasible, estimated_cost, motion_plan,
                         validate)
from .world import Task, WorldState, is_goal, misplaced_standing

INF = float("inf")

OPEN, CLOSED, PRUNED, ORPHAN = "open", "closed", "pruned", "orphan"


@dataclass
class Edge:
    parent: int
    action: object
    cost: float
    status: str = "provisional"  # or "confirmed"
    motion: object = None


@dataclass
class SearchNode:
    nid: int
    state: object
    key: object
    atoms: tuple
    tuples: tuple
    parents: list[Edge] = field(default_factory=list)
    successors: list[int] = field(default_factory=list)
    status: str = OPEN
    g: float = INF
    connected_goal: Optional[int] = None
    prev_status: Optional[str] = None  # status held when the node orphaned


class NoveltyTable:
    """tuple -> (main support id, backup ids in discovery order)."""

    def __init__(self):
        self.entries: dict[object, tuple[int, list[int]]] = {}

    def register(self, node: SearchNode) -> bool:
        """Record the node on every tuple it makes true; True iff it became
        the main support of at least one tuple (i.e. it is novel)."""
        novel = False
        for t in node.tuples:
            e = self.entries.get(t)
            if e is None:
                self.entries[t] = (node.nid, [])
                novel = True
            else:
                e[1].append(node.nid)
        return novel

    def retract(self, node: SearchNode, is_live: Callable[[int], bool]) -> list[tuple]:
        """Remove the node as supporter everywhere; returns tuples whose main
        support changed (promoted or deleted)."""
        changed = []
        for t in node.tuples:
            e = self.entries.get(t)
            if e is None:
                continue
            main, backups = e
            if main == node.nid:
                live = [b for b in backups if is_live(b)]
                if live:
                    new_main = live[0]
                    rest = [b for b in backups if b != new_main and is_live(b)]
                    self.entries[t] = (new_main, rest)
                else:
                    del self.entries[t]
                changed.append(t)
            else:
                e[1][:] = [b for b in backups if b != node.nid]
        return changed

    def main_of(self, t) -> Optional[int]:
        e = self.entries.get(t)
        return e[0] if e else None


def novelty_check(node: SearchNode, table: NoveltyTable, k: int) -> bool:
    """Register the node's atom tuples (size <= k); novel iff some tuple is
    seen for the first time. `node.tuples` must already be built for k."""
    return table.register(node)


def atom_tuples(atoms: tuple, k: int) -> tuple:
    out = []
    for size in range(1, k + 1):
        out.extend(itertools.combinations(atoms, size))
    return tuple(out)


@dataclass
class SubMetrics:
    expanded: int = 0
    generated: int = 0
    max_width: int = 0
    repairs: int = 0
    recovered: int = 0


class _Search:
    """One IW(k) run over a domain (Lazy-IW when mode == 'lazy')."""

    def __init__(self, domain, k: int, mode: str, metrics: SubMetrics,
                 expansion_cap: int = 0):
        self.domain = domain
        self.k = k
        self.mode = mode
        self.metrics = metrics
        self.expansion_cap = expansion_cap
        self.nodes: list[SearchNode] = []
        self.by_key: dict = {}
        self.table = NoveltyTable()
        self.open: deque[int] = deque()
        root_state = domain.initial_state
        self.root = self._new_node(root_state)
        self.root.g = 0.0
        self.root.status = OPEN
        self.table.register(self.root)
        self.open.append(self.root.nid)

    # -- graph primitives ---------------------------------------------------

    def _new_node(self, state) -> SearchNode:
        atoms = self.domain.atoms(state)
        node = SearchNode(nid=len(self.nodes), state=state, key=self.domain.key(state),
                          atoms=atoms, tuples=atom_tuples(atoms, self.k))
        self.nodes.append(node)
        self.by_key[node.key] = node
        self.metrics.generated += 1
        return node

    def _live(self, nid: int) -> bool:
        return self.nodes[nid].status != ORPHAN

    def best_edge(self, node: SearchNode) -> Optional[Edge]:
        best = None
        best_key = None
        for i, e in enumerate(node.parents):
            pg = self.nodes[e.parent].g
            if pg == INF:
                continue
            key = (pg + e.cost, i)
            if best is None or key < best_key:
                best, best_key = e, key
        return best

    def add_edge(self, parent: SearchNode, child: SearchNode, action, cost: float,
                 status: str = "provisional", motion=None) -> bool:
        for e in child.parents:
            if e.parent == parent.nid and e.action == action:
                return False
        child.parents.append(Edge(parent.nid, action, cost, status, motion))
        if child.nid not in parent.successors:
            parent.successors.append(child.nid)
        self._recompute_costs(child)
        return True

    def remove_edge(self, child: SearchNode, edge: Edge) -> None:
        child.parents.remove(edge)
        self._recompute_costs(child)

    def _affected_set(self, start: SearchNode) -> list[int]:
        seen = {start.nid}
        stack = [start.nid]
        while stack:
            nid = stack.pop()
            for s in self.nodes[nid].successors:
                if s not in seen:
                    seen.add(s)
                    stack.append(s)
        return sorted(seen)

    def _recompute_costs(self, start: SearchNode) -> None:
        """Recompute g over the successor closure of `start`.

        External parents (outside the closure) anchor a Dijkstra relaxation;
        nodes left at infinity become orphans, nodes returning from infinity
        are revived.
        """
        affected = self._affected_set(start)
        aff = set(affected)
        dist = {nid: INF for nid in affected}
        pq = []
        for nid in affected:
            node = self.nodes[nid]
            if node is self.root:
                dist[nid] = 0.0
                heapq.heappush(pq, (0.0, nid))
                continue
            best = INF
            for e in node.parents:
                if e.parent in aff:
                    continue
                pg = self.nodes[e.parent].g
                if pg == INF:
                    continue
                best = min(best, pg + e.cost)
            if best < INF:
                dist[nid] = best
                heapq.heappush(pq, (best, nid))
        while pq:
            d, nid = heapq.heappop(pq)
            if d > dist[nid]:
                continue
            for s in self.nodes[nid].successors:
                if s not in aff:
                    continue
                for e in self.nodes[s].parents:
                    if e.parent != nid:
                        continue
                    nd = d + e.cost
                    if nd < dist[s]:
                        dist[s] = nd
                        heapq.heappush(pq, (nd, s))

        newly_orphaned: list[SearchNode] = []
        revived: list[SearchNode] = []
        for nid in affected:
            node = self.nodes[nid]
            was = node.g
            node.g = dist[nid]
            if was < INF and node.g == INF and node is not self.root:
                newly_orphaned.append(node)
            elif was == INF and node.g < INF and node.status == ORPHAN:
                revived.append(node)
        if newly_orphaned:
            self._orphan(newly_orphaned)
        if revived:
            self._revive(revived)

    def _orphan(self, nodes: list[SearchNode]) -> None:
        """Retract novelty support of freshly disconnected nodes; promote
        backups and recover wrongly pruned nodes to the front of open."""
        self.metrics.repairs += 1
        promoted_tuples: list[tuple] = []
        for node in sorted(nodes, key=lambda n: n.nid):
            node.prev_status = node.status
            node.status = ORPHAN
        for node in sorted(nodes, key=lambda n: n.nid):
            promoted_tuples.extend(self.table.retract(node, self._live))
        recovered: list[SearchNode] = []
        for t in promoted_tuples:
            main = self.table.main_of(t)
            if main is None:
                continue
            cand = self.nodes[main]
            if cand.status == PRUNED and cand not in recovered:
                recovered.append(cand)
        for node in sorted(recovered, key=lambda n: n.nid, reverse=True):
            node.status = OPEN
            self.open.appendleft(node.nid)
            self.metrics.recovered += 1

    def _revive(self, nodes: list[SearchNode]) -> None:
        """Reconnected orphans re-register their tuples as if newly seen.

        An expanded node keeps its subtree (that is the reuse the lazy graph
        exists for); an unexpanded one is re-judged by the table as a fresh
        discovery."""
        for node in sorted(nodes, key=lambda n: n.nid):
            novel = self.table.register(node)
            prev = node.prev_status or CLOSED
            if prev == CLOSED:
                node.status = CLOSED
            elif novel:
                node.status = OPEN
                self.open.append(node.nid)
            else:
                node.status = PRUNED

    # -- plan extraction (backward walk with full validation) ----------------

    def get_plan(self, goal_node: SearchNode):
        """Walk goal -> root via best parents, fully validating provisional
        edges. A failing edge is removed (orphaning and novelty repair happen
        as side effects) and the walk restarts while the goal stays
        connected. Returns the edge chain root -> goal, or None."""
        goal_node.connected_goal = goal_node.nid
        while True:
            if goal_node.g == INF:
                return None
            node = goal_node
            chain: list[tuple[SearchNode, Edge]] = []
            failed = False
            while node is not self.root:
                edge = self.best_edge(node)
                if edge is None:
                    return None
                parent = self.nodes[edge.parent]
                if edge.status != "confirmed":
                    motion = self.domain.finish_check(parent.state, edge.action)
                    if motion is None:
                        self.remove_edge(node, edge)
                        failed = True
                        break
                    edge.status = "confirmed"
                    edge.motion = motion
                parent.connected_goal = goal_node.nid
                chain.append((node, edge))
                node = parent
            if failed:
                continue
            chain.reverse()
            return chain

    # -- main loop ------------------------------------------------------------

    def run(self):
        """Breadth-first expansion with novelty pruning; returns an edge
        chain for the first fully validated subplan, else None."""
        if self.domain.is_subgoal(self.root.state):
            return []
        expansions = 0
        while self.open:
            if self.expansion_cap and expansions >= self.expansion_cap:
                return None  # deterministic budget, counts as a failed attempt
            nid = self.open.popleft()
            parent = self.nodes[nid]
            if parent.status != OPEN:
                continue
            parent.status = CLOSED
            expansions += 1
            self.metrics.expanded += 1
            for action in self.domain.ground(parent.state):
                checked = (self.domain.full_check(parent.state, action)
                           if self.mode == "full"
                           else self.domain.lazy_check(parent.state, action))
                if checked is None:
                    continue
                succ_state, cost, motion = checked
                key = self.domain.key(succ_state)
                existing = self.by_key.get(key)
                if existing is not None:
                    status = "confirmed" if self.mode == "full" else "provisional"
                    self.add_edge(parent, existing, action, cost, status, motion)
                    if (existing.connected_goal is not None
                            and self.nodes[existing.connected_goal].g < INF):
                        plan = self.get_plan(self.nodes[existing.connected_goal])
                        if plan is not None:
                            return plan
                    continue
                node = self._new_node(succ_state)
                status = "confirmed" if self.mode == "full" else "provisional"
                self.add_edge(parent, node, action, cost, status, motion)
                if self.domain.is_subgoal(node.state):
                    plan = self.get_plan(node)
                    if plan is not None:
                        return plan
                    continue  # goal orphaned; keep searching
                if novelty_check(node, self.table, self.k):
                    node.status = OPEN
                    self.open.append(node.nid)
                else:
                    node.status = PRUNED
        return None


def lazy_iw(domain, k_max: int, mode: str, metrics: SubMetrics,
            expansion_cap: int = 0):
    """IW(k) for k = 1..k_max over the domain; returns the first validated
    subplan as a list of (action, motion, end_state), or None.

    `expansion_cap` bounds each width's breadth-first run (0 = unbounded);
    the caller treats a capped run like an exhausted one and escalates
    sampling instead.
    """
    for k in range(1, k_max + 1):
        metrics.max_width = max(metrics.max_width, k)
        search = _Search(domain, k, mode, metrics, expansion_cap)
        chain = search.run()
        if chain is not None:
            out = []
            for child, edge in chain:
                out.append((edge.action, edge.motion, child.state))
            return out
    return None


# ---------------------------------------------------------------------------
# TAMP domain adapter

def state_key(state: WorldState):
    held = None if state.held is None else (state.held[0], round(state.held[1], 9))
    return (round(state.base.x, 9), round(state.base.y, 9), held,
            tuple(sorted((oid, round(p.x, 9), round(p.y, 9))
                         for oid, p in state.object_poses.items())))


def state_atoms(state: WorldState) -> tuple:
    atoms = [("R", round(state.base.x, 9), round(state.base.y, 9))]
    for oid in state.standing_ids():
        p = state.object_poses[oid]
        atoms.append(("O", oid, round(p.x, 9), round(p.y, 9)))
    return tuple(atoms)


class TampDomain:
    """Adapter exposing a subproblem (task + samples + subgoal predicate)
    to the width-based search."""

    def __init__(self, task: Task, samples: SampleSet, evaluator: FeatureEvaluator,
                 start: WorldState, subgoal, stats: PipelineStats,
                 seed: int, sub_index: int, attempt: int,
                 ik_budget: int, rrt_iter_cap: int):
        self.task = task
        self.samples = samples
        self.evaluator = evaluator
        self.initial_state = start
        self.subgoal = subgoal
        self.stats = stats
        self.seed = seed
        self.sub_index = sub_index
        self.attempt = attempt
        self.ik_budget = ik_budget
        self.rrt_iter_cap = rrt_iter_cap

    def key(self, state: WorldState):
        return state_key(state)

    def atoms(self, state: WorldState):
        return state_atoms(state)

    def ground(self, state: WorldState):
        return ground_actions(state, self.samples, self.task)

    def is_subgoal(self, state: WorldState) -> bool:
        return self.subgoal(state)

    def _edge_rng(self, state: WorldState, action):
        return derive_rng(self.seed, "motion", self.sub_index, self.attempt,
                          repr(state_key(state)), repr(action))

    def lazy_check(self, state: WorldState, action):
        res = validate(state, action, self.samples, self.task, "lazy", self.stats,
                       ik_budget=self.ik_budget)
        if isinstance(res, Infeasible):
            return None
        assert isinstance(res, ProvisionallyFeasible)
        return res.end_state, res.est_cost, None

    def full_check(self, state: WorldState, action):
        res = validate(state, action, self.samples, self.task, "full", self.stats,
                       rng=self._edge_rng(state, action), ik_budget=self.ik_budget,
                       iter_cap=self.rrt_iter_cap)
        if isinstance(res, Infeasible):
            return None
        assert isinstance(res, Feasible)
        return res.motion.end_state, estimated_cost(state, action, self.samples), res.motion

    def finish_check(self, state: WorldState, action):
        """Stage 3 only, for provisional edges that already passed 1-2."""
        rng = self._edge_rng(state, action)
        motion = motion_plan(state, action, self.samples, self.task, rng,
                             self.rrt_iter_cap, self.stats)
        if isinstance(action, MoveBase):
            self.stats.record_move(motion is not None)
        else:
            self.stats.record(3, motion is not None)
        return motion


# ---------------------------------------------------------------------------
# Serialized outer loop

@dataclass
class SubplanRecord:
    rule: str
    start_index: int
    end_index: int
    features_before: FeatureVec
    features_after: FeatureVec


@dataclass
class Plan:
    actions: list  # (GroundAction, MotionPlan)
    states: list   # len(actions) + 1
    subplans: list[SubplanRecord]
    total_cost: float


@dataclass
class RunMetrics:
    success: bool = False
    expanded_nodes: int = 0
    generated_nodes: int = 0
    subplans: int = 0
    plan_actions: int = 0
    plan_cost: float = 0.0
    escalations: int = 0
    max_width: int = 0
    repairs: int = 0
    recovered: int = 0
    stats: PipelineStats = field(default_factory=PipelineStats)
    failure: Optional[str] = None

    @property
    def planning_units(self) -> int:
        s = self.stats
        return (s.calls[0] + s.calls[1] + s.calls[2] + s.move_calls
                + s.rrt_iterations)

    def to_json(self) -> dict:
        return {
            "format": "sketchplan-metrics/1",
            "success": self.success,
            "planning_units": self.planning_units,
            "expanded_nodes": self.expanded_nodes,
            "generated_nodes": self.generated_nodes,
            "subplans": self.subplans,
            "plan_actions": self.plan_actions,
            "plan_cost": round(self.plan_cost, 9),
            "escalations": self.escalations,
            "max_width": self.max_width,
            "repairs": self.repairs,
            "recovered": self.recovered,
            "pipeline": self.stats.to_json(),
            "failure": self.failure,
        }


@dataclass
class PlannerConfig:
    """Run knobs. k_max = 1 by default: on these pick-and-place tasks every
    subproblem the sketch induces has width 1, and when one fails the remedy
    is denser sampling, not a wider (exponentially larger) novelty sweep.
    Raise k_max to re-enable the iterated-width ladder."""

    seed: int = 0
    density: SamplingDensity = field(default_factory=SamplingDensity)
    escalation_max: int = 8
    uncapped_escalation: bool = False
    ik_budget: int = 64
    rrt_iter_cap: int = 2000
    k_max: int = 1
    iw_expansion_cap: int = 1500       # per-width breadth-first budget
    max_subplans: int = 400


def _solve_serialized(task: Task, config: PlannerConfig, mode: str,
                      subgoal_factory) -> tuple[Optional[Plan], RunMetrics]:
    """Common engine for the sketch-guided planner and the goal-count
    baseline; `subgoal_factory(state, evaluator) -> (label, predicate)`."""
    metrics = RunMetrics()
    density = config.density
    seed = config.seed
    k_max_cfg = config.k_max if config.k_max > 0 else (len(task.objects) + 1)

    def resample_shared(density):
        rng_b = derive_rng(seed, "bases", density.attempt)
        bases = sample_bases(task, density.n_bases, rng_b)
        roadmap = build_roadmap(bases, task.tables, task.arena)
        return bases, roadmap

    bases, roadmap = resample_shared(density)

    state = task.start
    actions: list = []
    states: list = [state]
    subrecords: list[SubplanRecord] = []
    sub_index = 0

    while not is_goal(state, task):
        if len(subrecords) >= config.max_subplans:
            metrics.failure = "subplan budget exhausted"
            return None, metrics
        rng_s = derive_rng(seed, "samples", sub_index, density.attempt)
        samples = build_samples(task, state, density, bases, roadmap, rng_s,
                                (seed, sub_index, density.attempt))
        evaluator = FeatureEvaluator(task, samples)
        try:
            label, predicate, f0 = subgoal_factory(state, evaluator)
        except NoApplicableRule as exc:
            metrics.failure = f"dead-end feature valuation: {exc}"
            return None, metrics
        domain = TampDomain(task, samples, evaluator, state, predicate,
                            metrics.stats, seed, sub_index, density.attempt,
                            config.ik_budget, config.rrt_iter_cap)
        sub = SubMetrics()
        chain = lazy_iw(domain, k_max_cfg, mode, sub, config.iw_expansion_cap)
        metrics.expanded_nodes += sub.expanded
        metrics.generated_nodes += sub.generated
        metrics.max_width = max(metrics.max_width, sub.max_width)
        metrics.repairs += sub.repairs
        metrics.recovered += sub.recovered
        if chain is None:
            try:
                density = escalate(density, config.escalation_max,
                                   config.uncapped_escalation)
            except DensityCapReached as exc:
                metrics.failure = str(exc)
                return None, metrics
            metrics.escalations += 1
            bases, roadmap = resample_shared(density)
            continue
        start_index = len(actions)
        for action, motion, end_state in chain:
            actions.append((action, motion))
            states.append(end_state)
            state = end_state
        f1 = evaluator.features(state)
        subrecords.append(SubplanRecord(label, start_index, len(actions), f0, f1))
        sub_index += 1

    plan = Plan(actions, states, subrecords,
                sum(m.cost for _, m in actions))
    metrics.success = True
    metrics.subplans = len(subrecords)
    metrics.plan_actions = len(actions)
    metrics.plan_cost = plan.total_cost
    return plan, metrics


def siwr(task: Task, sketch: Sketch, config: PlannerConfig,
         mode: str = "lazy") -> tuple[Optional[Plan], RunMetrics]:
    """Sketch-serialized planning; mode 'lazy' defers motion checks to plan
    extraction, 'full' validates every generated action completely."""
    ok, residual = check_termination(sketch)
    if not ok:
        raise ValueError(f"sketch does not terminate; residual rules "
                         f"{[r.id for r in residual]}")

    def factory(state: WorldState, evaluator: FeatureEvaluator):
        f0 = evaluator.features(state)
        rule = active_rule(sketch, f0)
        want_held = rule.eff("H") == "true"

        def predicate(s: WorldState) -> bool:
            if s.held is None:
                if is_goal(s, task):
                    return True
                if want_held:
                    return False
            elif not want_held:
                return False
            return pair_satisfies(rule, f0, evaluator.features(s))

        return rule.id, predicate, f0

    return _solve_serialized(task, config, mode, factory)


def siw_baseline(task: Task, config: PlannerConfig) -> tuple[Optional[Plan], RunMetrics]:
    """Goal-count serialization: a subgoal is any state with a strictly
    smaller misplaced count and empty gripper."""

    def factory(state: WorldState, evaluator: FeatureEvaluator):
        m0 = len(misplaced_standing(state, task))
        f0 = evaluator.features(state)

        def predicate(s: WorldState) -> bool:
            return s.held is None and len(misplaced_standing(s, task)) < m0

        return "goal-count", predicate, f0

    return _solve_serialized(task, config, "lazy", factory)
