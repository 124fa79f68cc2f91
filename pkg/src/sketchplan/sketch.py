"""The sketch rule language: feature vectors, rules, rule-pair satisfaction,
rule selection, the termination sieve, and the rule file format.

Features: H (holding), I (the held object has a goal pose whose placement
would be unobstructed and would not obstruct any other misplaced object),
m (misplaced count), u (minimum combined blockage of any misplaced object),
v (total blockage). Feature *values* are computed in `features`; this module
only cares about their algebra.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Optional

# Sentinel blockage for an object with no usable pick/place option at the
# current sampling density; escalation refines it away.
BLOCK_INF = 1_000_000


class NoApplicableRule(Exception):
    """No rule matches a non-goal feature valuation (dead-end sketch)."""


@dataclass(frozen=True)
class FeatureVec:
    H: bool
    I: bool
    m: int
    u: int
    v: int

    def as_dict(self) -> dict:
        return {"H": self.H, "I": self.I, "m": self.m, "u": self.u, "v": self.v}


BOOL_FEATS = ("H", "I")
NUM_FEATS = ("m", "u", "v")

# condition values: True / False for booleans, "zero" / "pos" for counters
# effect values: "true" / "false" / "free" for booleans,
#                "dec" / "noninc" / "free" for counters; absent = preserved


@dataclass(frozen=True)
class SketchRule:
    id: str
    conditions: tuple[tuple[str, object], ...]
    effects: tuple[tuple[str, str], ...]

    def cond(self, feat: str):
        for k, val in self.conditions:
            if k == feat:
                return val
        return None

    def eff(self, feat: str) -> Optional[str]:
        for k, val in self.effects:
            if k == feat:
                return val
        return None

    def __post_init__(self):
        seen = set()
        for k, _ in self.conditions:
            if k in seen:
                raise ValueError(f"rule {self.id}: duplicate condition on {k}")
            seen.add(k)
        seen = set()
        for k, _ in self.effects:
            if k in seen:
                raise ValueError(f"rule {self.id}: duplicate effect on {k}")
            seen.add(k)


@dataclass(frozen=True)
class Sketch:
    rules: tuple[SketchRule, ...]

    def __post_init__(self):
        _check_mutex(self.rules)


def default_sketch() -> Sketch:
    """The built-in four rules.

    r1: a misplaced object is directly movable: pick it up (m drops, I holds,
        total blockage must not grow).
    r2: everything misplaced is obstructed: pick an obstructor (v drops).
    r3: holding something with no innocuous goal pose: set it down elsewhere
        without changing u or v.
    r4: holding something with an innocuous goal pose: put it down there
        (m, u, v all preserved).
    """
    r1 = SketchRule("r1",
                    (("H", False), ("m", "pos"), ("u", "zero")),
                    (("H", "true"), ("I", "true"), ("m", "dec"),
                     ("u", "free"), ("v", "noninc")))
    r2 = SketchRule("r2",
                    (("H", False), ("m", "pos"), ("u", "pos")),
                    (("H", "true"), ("I", "free"), ("m", "free"),
                     ("u", "free"), ("v", "dec")))
    r3 = SketchRule("r3",
                    (("H", True), ("I", False)),
                    (("H", "false"), ("I", "free"), ("m", "free")))
    r4 = SketchRule("r4",
                    (("H", True), ("I", True)),
                    (("H", "false"), ("I", "free")))
    return Sketch((r1, r2, r3, r4))


def _conditions_hold(rule: SketchRule, f: FeatureVec) -> bool:
    for feat, want in rule.conditions:
        val = getattr(f, feat)
        if feat in BOOL_FEATS:
            if bool(val) != bool(want):
                return False
        else:
            if want == "zero" and val != 0:
                return False
            if want == "pos" and val <= 0:
                return False
    return True


def pair_satisfies(rule: SketchRule, f: FeatureVec, f2: FeatureVec) -> bool:
    """True iff f meets the rule's conditions, every effect holds across
    (f, f2), and unmentioned features are unchanged."""
    if not _conditions_hold(rule, f):
        return False
    for feat in BOOL_FEATS + NUM_FEATS:
        e = rule.eff(feat)
        a, b = getattr(f, feat), getattr(f2, feat)
        if e is None:
            if a != b:
                return False
        elif e == "true":
            if not b:
                return False
        elif e == "false":
            if b:
                return False
        elif e == "dec":
            if not b < a:
                return False
        elif e == "noninc":
            if not b <= a:
                return False
        elif e == "free":
            pass
        else:
            raise ValueError(f"unknown effect {e!r}")
    return True


def active_rule(sketch: Sketch, f: FeatureVec) -> SketchRule:
    """The unique rule whose conditions f satisfies."""
    hits = [r for r in sketch.rules if _conditions_hold(r, f)]
    if not hits:
        raise NoApplicableRule(f"no rule applies at {f}")
    return hits[0]


# ---------------------------------------------------------------------------
# Abstract valuations and the load-time mutual-exclusivity check

def _abstract_valuations():
    """All (H, I, m, u, v) abstractions consistent with the feature
    invariants, counters abstracted to zero / pos."""
    out = []
    for H, I in itertools.product((False, True), repeat=2):
        if I and not H:
            continue
        for m, u, v in itertools.product(("zero", "pos"), repeat=3):
            if m == "zero" and (u == "pos" or v == "pos"):
                continue
            out.append((H, I, m, u, v))
    return out


def _abstract_holds(rule: SketchRule, val) -> bool:
    H, I, m, u, v = val
    probe = FeatureVec(H, I, 0 if m == "zero" else 1, 0 if u == "zero" else 1,
                       0 if v == "zero" else 1)
    return _conditions_hold(rule, probe)


def _check_mutex(rules) -> None:
    for val in _abstract_valuations():
        hits = [r.id for r in rules if _abstract_holds(r, val)]
        if len(hits) > 1:
            raise ValueError(f"rules {hits} overlap on valuation {val}")


# ---------------------------------------------------------------------------
# Termination: sieve over the abstract policy graph

def check_termination(sketch: Sketch):
    """Returns (True, []) when subgoaling cannot repeat forever, else
    (False, residual_rules): the rules still supporting abstract cycles.

    The graph has one node per consistent abstract valuation and one edge per
    rule-compatible valuation pair. Edges are sieved away per strongly
    connected component: a strict counter decrease with no compensating
    increase inside the component cannot recur, and a boolean flip with no
    inverse flip inside the component cannot recur. The sketch terminates iff
    the sieve empties every cycle.
    """
    vals = _abstract_valuations()
    idx = {v: i for i, v in enumerate(vals)}
    edges = []  # (src, dst, rule_id, labels) labels: dict feat -> kind
    for val in vals:
        for r in sketch.rules:
            if not _abstract_holds(r, val):
                continue
            for dst in vals:
                lab = _edge_labels(r, val, dst)
                if lab is not None:
                    edges.append((idx[val], idx[dst], r.id, lab))

    def sccs(active_edges):
        n = len(vals)
        adj = [[] for _ in range(n)]
        for e_i, (s, d, _, _) in enumerate(active_edges):
            adj[s].append((d, e_i))
        index = [None] * n
        low = [0] * n
        on = [False] * n
        stack = []
        comp = [None] * n
        counter = [0]
        comps = [0]

        def strong(v0):
            work = [(v0, 0)]
            while work:
                v, pi = work[-1]
                if pi == 0:
                    index[v] = low[v] = counter[0]
                    counter[0] += 1
                    stack.append(v)
                    on[v] = True
                advanced = False
                for k in range(pi, len(adj[v])):
                    w = adj[v][k][0]
                    if index[w] is None:
                        work[-1] = (v, k + 1)
                        work.append((w, 0))
                        advanced = True
                        break
                    elif on[w]:
                        low[v] = min(low[v], index[w])
                if advanced:
                    continue
                if low[v] == index[v]:
                    while True:
                        w = stack.pop()
                        on[w] = False
                        comp[w] = comps[0]
                        if w == v:
                            break
                    comps[0] += 1
                work.pop()
                if work:
                    pv = work[-1][0]
                    low[pv] = min(low[pv], low[v])

        for v in range(n):
            if index[v] is None:
                strong(v)
        return comp

    active = list(edges)
    changed = True
    while changed and active:
        changed = False
        comp = sccs(active)
        # group internal edges by component
        internal: dict[int, list[int]] = {}
        for e_i, (s, d, _, _) in enumerate(active):
            if comp[s] == comp[d]:
                internal.setdefault(comp[s], []).append(e_i)
        drop: set[int] = set()
        for cid, eids in internal.items():
            labels = [active[e][3] for e in eids]
            for feat in NUM_FEATS:
                if any(l.get(feat) == "free-up" for l in labels):
                    continue
                decs = [e for e, l in zip(eids, labels) if l.get(feat) == "dec"]
                drop.update(decs)
            for feat in BOOL_FEATS:
                t2f = [e for e, l in zip(eids, labels) if l.get(feat) == "t2f"]
                f2t = [e for e, l in zip(eids, labels) if l.get(feat) == "f2t"]
                if t2f and not f2t:
                    drop.update(t2f)
                if f2t and not t2f:
                    drop.update(f2t)
        if drop:
            active = [e for i, e in enumerate(active) if i not in drop]
            changed = True

    # any remaining edge inside a cycle marks its rule as non-terminating
    residual: list[str] = []
    if active:
        comp = sccs(active)
        for s, d, rid, _ in active:
            if comp[s] == comp[d] and rid not in residual:
                residual.append(rid)
    if residual:
        rules = [r for r in sketch.rules if r.id in residual]
        return False, rules
    return True, []


def _edge_labels(rule: SketchRule, src, dst) -> Optional[dict]:
    """Labels of the abstract edge src -> dst under `rule`, or None when the
    pair is inconsistent with the rule's effects."""
    sH, sI, sm, su, sv = src
    dH, dI, dm, du, dv = dst
    # destination must respect the feature invariants (already guaranteed by
    # construction of the valuation set)
    lab: dict[str, str] = {}
    for feat, s_val, d_val in (("H", sH, dH), ("I", sI, dI)):
        e = rule.eff(feat)
        if e is None:
            if s_val != d_val:
                return None
        elif e == "true":
            if not d_val:
                return None
        elif e == "false":
            if d_val:
                return None
        # record flips for the sieve
        if s_val and not d_val:
            lab[feat] = "t2f"
        elif d_val and not s_val:
            lab[feat] = "f2t"
    for feat, s_val, d_val in (("m", sm, dm), ("u", su, du), ("v", sv, dv)):
        e = rule.eff(feat)
        if e is None:
            if s_val != d_val:
                return None
            continue
        if e == "dec":
            if s_val == "zero":
                return None  # cannot decrease 0
            lab[feat] = "dec"
        elif e == "noninc":
            if s_val == "zero" and d_val == "pos":
                return None
            if s_val == "pos" and d_val == "zero":
                lab[feat] = "dec"
        elif e == "free":
            if d_val == "pos":
                lab[feat] = "free-up"  # value may grow
            elif s_val == "pos":
                lab[feat] = "dec"      # pos -> zero is a strict drop
        else:
            raise ValueError(e)
    return lab


# ---------------------------------------------------------------------------
# Sketch file format: one rule per line, "{cond,...} -> {eff,...}"

_COND_TOKENS = {"H": ("H", True), "!H": ("H", False), "I": ("I", True),
                "!I": ("I", False), "m=0": ("m", "zero"), "m>0": ("m", "pos"),
                "u=0": ("u", "zero"), "u>0": ("u", "pos"),
                "v=0": ("v", "zero"), "v>0": ("v", "pos")}

_EFF_TOKENS = {"H": ("H", "true"), "!H": ("H", "false"), "I": ("I", "true"),
               "I?": ("I", "free"), "m-": ("m", "dec"), "m?": ("m", "free"),
               "u?": ("u", "free"), "v-": ("v", "dec"), "v?": ("v", "free"),
               "v<=": ("v", "noninc")}


def parse_sketch(text: str) -> Sketch:
    rules = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "->" not in line:
            raise ValueError(f"line {lineno}: missing '->'")
        left, right = line.split("->", 1)

        def braces(part, which):
            part = part.strip()
            if not (part.startswith("{") and part.endswith("}")):
                raise ValueError(f"line {lineno}: {which} must be brace-delimited")
            body = part[1:-1].strip()
            return [t.strip() for t in body.split(",") if t.strip()] if body else []

        conds = []
        for tok in braces(left, "conditions"):
            if tok not in _COND_TOKENS:
                raise ValueError(f"line {lineno}: unknown condition token {tok!r}")
            conds.append(_COND_TOKENS[tok])
        effs = []
        for tok in braces(right, "effects"):
            if tok not in _EFF_TOKENS:
                raise ValueError(f"line {lineno}: unknown effect token {tok!r}")
            effs.append(_EFF_TOKENS[tok])
        rules.append(SketchRule(f"r{len(rules) + 1}", tuple(conds), tuple(effs)))
    if not rules:
        raise ValueError("empty sketch")
    return Sketch(tuple(rules))


def load_sketch(path) -> Sketch:
    with open(path, "r", encoding="utf-8") as f:
        return parse_sketch(f.read())
