"""Assembly of the convex-set transition system: one labeled region per
(proposition, eligible robot), connector chains between every pair of
anchors, adjacency by pairwise intersection, and a labeling that maps every
set to the propositions it certifies together with the certifying robots.
"""

from __future__ import annotations

import hashlib

import numpy as np

from .errors import (InitialInCollision, NoFeasibleSeed, NotConnected,
                     ProgressStall, SeedInCollision)
from .geometry import EMPTY, HPolytope, chebyshev_center, intersect
from .regions import (LabeledConvexSet, RegionConfig, World,
                      construct_labeled_set, inflate_region, rrt)
from .regions import _farthest_covered, _point_at


class CsTransitionSystem:
    def __init__(self, world, sets, adjacency, witnesses, initial_index,
                 anchors, chains, reachable):
        self.world = world
        self.sets = list(sets)
        self.adjacency = {int(k): tuple(v) for k, v in adjacency.items()}
        self.witnesses = dict(witnesses)
        self.initial_index = int(initial_index)
        self.anchors = dict(anchors)  # (ap, robot) -> set index
        self.chains = dict(chains)    # (set index, set index) -> tuple of set indices
        self.reachable = frozenset(reachable)

    def label_of(self, idx):
        return frozenset(self.sets[idx].labels)

    def labels_by_robot(self, idx):
        """Tuple of per-robot generated proposition sets for one set."""
        out = [set() for _ in range(self.world.n_robots)]
        for ap, robots in self.sets[idx].labels.items():
            for r in robots:
                out[r].add(ap)
        return tuple(frozenset(s) for s in out)

    def polytope(self, idx):
        return self.sets[idx].set

    @property
    def n_sets(self):
        return len(self.sets)

    def edge_witness(self, i, j):
        return self.witnesses.get((min(i, j), max(i, j)))

    def chain_between(self, i, j):
        return self.chains.get((i, j)) or self.chains.get((j, i))

    def to_json(self):
        return {
            "sets": [{
                "halfspaces": s.set.to_json()["halfspaces"],
                "labels": {ap: sorted(robots) for ap, robots in sorted(s.labels.items())},
                "seed": [float(v) for v in s.seed],
                "kind": s.kind,
            } for s in self.sets],
            "adjacency": {str(k): list(v) for k, v in sorted(self.adjacency.items())},
            "witnesses": [[list(k), [float(v) for v in w]]
                          for k, w in sorted(self.witnesses.items())],
            "initial_index": self.initial_index,
            "anchors": [[ap, r, idx] for (ap, r), idx in sorted(self.anchors.items())],
            "chains": [[list(k), list(v)] for k, v in sorted(self.chains.items())],
            "reachable": sorted(self.reachable),
        }

    @staticmethod
    def from_json(obj, world):
        sets = []
        for s in obj["sets"]:
            poly = HPolytope.from_json({"halfspaces": s["halfspaces"]})
            labels = {ap: frozenset(robots) for ap, robots in s["labels"].items()}
            sets.append(LabeledConvexSet(poly, labels, np.array(s["seed"], float),
                                         s["kind"]))
        adjacency = {int(k): tuple(v) for k, v in obj["adjacency"].items()}
        witnesses = {tuple(k): np.array(w, float) for k, w in obj["witnesses"]}
        anchors = {(ap, r): idx for ap, r, idx in obj["anchors"]}
        chains = {tuple(k): tuple(v) for k, v in obj["chains"]}
        return CsTransitionSystem(world, sets, adjacency, witnesses,
                                  obj["initial_index"], anchors, chains,
                                  obj["reachable"])


def label_of(ts, idx):
    return ts.label_of(idx)


def _region_key(poly):
    payload = np.round(np.hstack([poly.A, poly.b[:, None]]), 9).tobytes()
    return hashlib.sha1(payload).hexdigest()


def _slice_bbox(poly, n_robots):
    lo, hi = poly.bounding_box()
    return [(lo[2 * i:2 * i + 2], hi[2 * i:2 * i + 2]) for i in range(n_robots)]


def _target_is_box(region):
    return all(np.sum(np.abs(row) > 1e-12) == 1 for row in region.A)


def _slice_in_region(slice_lo, slice_hi, region, tol=1e-7):
    if _target_is_box(region):
        for row, off in zip(region.A, region.b):
            k = int(np.argmax(np.abs(row)))
            val = slice_hi[k] if row[k] > 0 else slice_lo[k]
            if row[k] * val > off + tol:
                return False
        return True
    # general polytope: support function over the bounding box corners is
    # not sound, fall back to corner enumeration of the slice box
    corners = [(slice_lo[0], slice_lo[1]), (slice_lo[0], slice_hi[1]),
               (slice_hi[0], slice_lo[1]), (slice_hi[0], slice_hi[1])]
    return all(region.contains(np.array(c), tol=tol) for c in corners)


def _avoid_world(world, aps):
    """World whose obstacles additionally exclude every target region.

    Connector regions are grown in this world so that no connector straddles
    a labeled region: a trajectory can only produce a proposition while
    inside that proposition's labeled set, which keeps set-wise labeling
    faithful to the geometry (negated propositions especially).
    """
    extra = [world.targets[ap].region for ap in sorted(aps)]
    return World(world.robots, list(world.obstacles) + extra, {}, world.clearance)


def _connect_sets(world, avoid, start_set, goal_set, s_i, s_j, rng, cfg):
    """Connector chain between two anchor sets.

    The guide path is planned in the true world (it may cross labeled
    regions), while the connector regions are inflated in the avoid-world.
    The chain is seeded at the farthest guide-path point covered by the
    union grown so far and succeeds once a connector reaches the goal set.
    A guide path that dives through an intermediate labeled region simply
    stalls; such pairs are reached through that region's own anchor instead.
    """
    if intersect(start_set.set, goal_set.set) is not EMPTY:
        return []
    path = rrt(world, s_i, s_j, rng, cfg)
    coverage = [start_set.set]
    connectors = []
    if len(path) >= 2:
        lengths = np.concatenate([[0.0], np.cumsum(
            np.linalg.norm(np.diff(path, axis=0), axis=1))])
    else:
        lengths = np.array([0.0])
    progress = -1.0
    stalls = 0
    while len(connectors) < cfg.max_chain_regions:
        farthest = _farthest_covered(coverage, path, lengths) if len(path) >= 2 else None
        if farthest is None:
            raise ProgressStall("guide path escapes the anchor set")
        if farthest <= progress + cfg.progress_tol:
            stalls += 1
            if stalls > 3:
                raise ProgressStall(
                    f"chain stalled at arc length {progress:.4f} of {lengths[-1]:.4f}")
        else:
            stalls = 0
            progress = farthest
        placed = False
        # the exit point may sit on a label-region or obstacle face; try
        # nudging the seed both forward past it and backward behind it
        step = max(0.004, 0.01 * lengths[-1])
        for k in (0.0, 1.0, -1.0, 3.0, -3.0, 8.0, -8.0):
            s = min(max(farthest + k * step, 0.0), lengths[-1])
            seed = _point_at(path, lengths, s)
            if not avoid.joint_free(seed):
                continue
            try:
                region = inflate_region(avoid, seed, cfg=cfg)
            except SeedInCollision:
                continue
            coverage.append(region)
            connectors.append(region)
            placed = True
            break
        if not placed:
            raise ProgressStall("no inflatable seed near the coverage boundary")
        if intersect(connectors[-1], goal_set.set) is not EMPTY:
            return connectors
    raise ProgressStall(f"chain exceeded {cfg.max_chain_regions} regions")


def build_ts(world, aps, s0, seed=0, cfg=None):
    """Build the transition system for the given propositions and start.

    Every proposition gets one labeled set per eligible robot (an explicit
    robot selector names one; "any" tries all and keeps the feasible ones).
    Connector chains are grown between all anchor pairs where the guide
    planner succeeds; disconnected pairs simply stay unconnected.
    """
    cfg = cfg or RegionConfig()
    s0 = np.asarray(s0, float)
    if not world.joint_free(s0):
        raise InitialInCollision(f"initial configuration {s0.tolist()} is in collision")

    registry = {}
    sets = []

    def register(lset):
        key = _region_key(lset.set)
        if key in registry:
            idx = registry[key]
            if lset.kind != "connector" and sets[idx].kind == "connector":
                sets[idx] = LabeledConvexSet(sets[idx].set, sets[idx].labels,
                                             lset.seed, lset.kind)
            return idx
        registry[key] = len(sets)
        sets.append(lset)
        return registry[key]

    anchors = {}
    for ap in sorted(aps):
        if ap not in world.targets:
            raise NoFeasibleSeed(f"proposition {ap} has no target region in the world")
        target = world.targets[ap]
        eligible = [target.selector] if target.selector != "any" \
            else list(range(world.n_robots))
        placed = False
        last_err = None
        for r in eligible:
            try:
                lset = construct_labeled_set(world, ap, r, cfg=cfg)
            except NoFeasibleSeed as err:
                last_err = err
                continue
            anchors[(ap, r)] = register(lset)
            placed = True
        if not placed:
            raise NoFeasibleSeed(f"no robot can realize proposition {ap}: {last_err}")

    avoid = _avoid_world(world, aps)

    initial_index = None
    for (ap, r), idx in anchors.items():
        if sets[idx].set.contains(s0):
            initial_index = idx
            break
    if initial_index is None:
        # exempt any target region the start happens to sit in
        inside = [ap for ap in sorted(aps)
                  if any(world.targets[ap].region.contains(world.robot_slice(s0, r), tol=0.0)
                         for r in range(world.n_robots))]
        avoid_init = _avoid_world(world, set(aps) - set(inside)) if inside else avoid
        region = inflate_region(avoid_init, s0, cfg=cfg)
        initial_index = register(LabeledConvexSet(region, {}, s0.copy(), kind="initial"))

    anchor_indices = sorted(set(anchors.values()) | {initial_index})
    chains = {}
    for pos, i in enumerate(anchor_indices):
        for j in anchor_indices[pos + 1:]:
            rng = np.random.default_rng([int(seed), i, j])
            try:
                chain = _connect_sets(world, avoid, sets[i], sets[j],
                                      sets[i].seed, sets[j].seed, rng, cfg)
            except (NotConnected, ProgressStall, SeedInCollision):
                continue
            ids = [i]
            for region in chain:
                ids.append(register(LabeledConvexSet(region, {},
                                                     region.interior_point.copy())))
            ids.append(j)
            dedup = [ids[0]]
            for v in ids[1:]:
                if v != dedup[-1]:
                    dedup.append(v)
            chains[(i, j)] = tuple(dedup)

    # full labeling: a set certifies a proposition for a robot when the
    # robot's slice lies inside the target region
    bboxes = [_slice_bbox(s.set, world.n_robots) for s in sets]
    for idx, lset in enumerate(sets):
        labels = {}
        for ap, target in world.targets.items():
            if ap not in aps:
                continue
            robots = frozenset(
                r for r in range(world.n_robots)
                if target.allows(r)
                and _slice_in_region(*bboxes[idx][r], target.region))
            if robots:
                labels[ap] = robots
        sets[idx] = LabeledConvexSet(lset.set, labels, lset.seed, lset.kind)

    # adjacency with bounding-box prescreen
    joint_bboxes = [s.set.bounding_box() for s in sets]
    adjacency = {i: [] for i in range(len(sets))}
    witnesses = {}
    for i in range(len(sets)):
        lo_i, hi_i = joint_bboxes[i]
        for j in range(i + 1, len(sets)):
            lo_j, hi_j = joint_bboxes[j]
            if np.any(lo_i > hi_j + 1e-9) or np.any(lo_j > hi_i + 1e-9):
                continue
            meet = intersect(sets[i].set, sets[j].set)
            if meet is EMPTY:
                continue
            adjacency[i].append(j)
            adjacency[j].append(i)
            witnesses[(i, j)] = np.array(meet.interior_point, float)
    adjacency = {k: tuple(sorted(v)) for k, v in adjacency.items()}

    reachable = {initial_index}
    stack = [initial_index]
    while stack:
        u = stack.pop()
        for v in adjacency[u]:
            if v not in reachable:
                reachable.add(v)
                stack.append(v)

    return CsTransitionSystem(world, sets, adjacency, witnesses, initial_index,
                              anchors, chains, reachable)
