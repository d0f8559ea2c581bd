"""Collision-free convex regions in joint configuration space.

Robots are planar points (optionally with a disc radius) moving in a shared
workspace with polytopic obstacles. Labeled regions anchor atomic
propositions; connecting regions are grown along RRT guide paths, seeding
each new region at the farthest point of the path still covered by the
regions built so far.

Obstacle avoidance inside a region is enforced by supporting hyperplanes of
the (radius-inflated) obstacles, recentered a few times; inter-robot
clearance is linearized by one separating hyperplane per robot pair, fixed
by the seed configuration. Both constructions are sound: every contained
configuration is collision-free. They are conservative, which only affects
completeness.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (NoFeasibleSeed, NotConnected, ProgressStall,
                     SeedInCollision)
from .geometry import (EMPTY, EMPTINESS_TOL, HPolytope, chebyshev_center,
                       intersect, project)

PLANAR_DIM = 2


@dataclass
class RegionConfig:
    rrt_step: float = 0.12
    rrt_goal_bias: float = 0.1
    rrt_max_iters: int = 50_000
    collision_resolution: float = 0.01
    shortcut_attempts: int = 120
    iris_iterations: int = 5
    progress_tol: float = 1e-6
    max_chain_regions: int = 64
    # guide paths keep this clearance from obstacles so region chains can
    # always grow past them; regions themselves use the exact obstacles
    path_obstacle_margin: float = 0.01


@dataclass(frozen=True)
class Robot:
    home: tuple
    radius: float
    workspace: HPolytope


@dataclass(frozen=True)
class Target:
    name: str
    selector: object  # robot index or "any"
    region: HPolytope

    def allows(self, robot_idx):
        return self.selector == "any" or self.selector == robot_idx


class World:
    """Static planar world: robots, shared obstacles, labeled target regions."""

    def __init__(self, robots, obstacles, targets, clearance=0.0):
        self.robots = list(robots)
        self.obstacles = list(obstacles)
        self.targets = dict(targets)
        self.clearance = float(clearance)
        self._inflated = [
            [HPolytope(o.A, o.b + r.radius, normalize=False) for o in self.obstacles]
            for r in self.robots
        ]

    @property
    def n_robots(self):
        return len(self.robots)

    @property
    def joint_dim(self):
        return PLANAR_DIM * self.n_robots

    def robot_slice(self, x, i):
        x = np.asarray(x, float)
        return x[PLANAR_DIM * i:PLANAR_DIM * (i + 1)]

    def required_separation(self, i, j):
        return max(self.clearance, self.robots[i].radius + self.robots[j].radius)

    def robot_point_free(self, p, i, tol=EMPTINESS_TOL, obstacle_margin=0.0):
        """Free iff inside the robot's workspace and not strictly inside any
        radius-inflated obstacle; touching an obstacle boundary is free.
        A positive obstacle_margin additionally rejects points that close
        to an obstacle (used for guide paths, never for regions)."""
        if not self.robots[i].workspace.contains(p, tol=tol):
            return False
        for o in self._inflated[i]:
            if o.contains(p, tol=obstacle_margin - tol):
                return False
        return True

    def joint_free(self, x, tol=EMPTINESS_TOL, obstacle_margin=0.0):
        for i in range(self.n_robots):
            if not self.robot_point_free(self.robot_slice(x, i), i, tol=tol,
                                         obstacle_margin=obstacle_margin):
                return False
        for i in range(self.n_robots):
            for j in range(i + 1, self.n_robots):
                sep = np.linalg.norm(self.robot_slice(x, i) - self.robot_slice(x, j))
                if sep < self.required_separation(i, j) - tol:
                    return False
        return True

    def points_free(self, X, tol=EMPTINESS_TOL, obstacle_margin=0.0):
        """Vectorized joint_free over the rows of X."""
        X = np.atleast_2d(np.asarray(X, float))
        for i in range(self.n_robots):
            P = X[:, PLANAR_DIM * i:PLANAR_DIM * (i + 1)]
            ws = self.robots[i].workspace
            if np.any((P @ ws.A.T - ws.b) > tol):
                return False
            for o in self._inflated[i]:
                if np.any(np.all(P @ o.A.T - o.b <= obstacle_margin - tol, axis=1)):
                    return False
        for i in range(self.n_robots):
            Pi = X[:, PLANAR_DIM * i:PLANAR_DIM * (i + 1)]
            for j in range(i + 1, self.n_robots):
                Pj = X[:, PLANAR_DIM * j:PLANAR_DIM * (j + 1)]
                sep = np.linalg.norm(Pi - Pj, axis=1)
                if np.any(sep < self.required_separation(i, j) - tol):
                    return False
        return True

    def segment_free(self, x0, x1, resolution, obstacle_margin=0.0):
        x0 = np.asarray(x0, float)
        x1 = np.asarray(x1, float)
        steps = max(2, int(np.ceil(np.linalg.norm(x1 - x0) / resolution)) + 1)
        ts = np.linspace(0.0, 1.0, steps)
        X = x0[None, :] * (1 - ts[:, None]) + x1[None, :] * ts[:, None]
        return self.points_free(X, obstacle_margin=obstacle_margin)

    def obstacle_clearance(self, x):
        """Smallest distance from any robot to any inflated obstacle."""
        clear = np.inf
        for i in range(self.n_robots):
            p = self.robot_slice(x, i)
            for o in self._inflated[i]:
                if o.contains(p, tol=0.0):
                    return 0.0
                clear = min(clear, float(np.linalg.norm(p - project(o, p))))
        return clear

    def lift_rows(self, i, A2, b2):
        """Embed 2-D rows acting on robot i into joint space."""
        A2 = np.atleast_2d(np.asarray(A2, float))
        rows = np.zeros((A2.shape[0], self.joint_dim))
        rows[:, PLANAR_DIM * i:PLANAR_DIM * (i + 1)] = A2
        return rows, np.atleast_1d(np.asarray(b2, float))

    def joint_workspace(self):
        blocks_A, blocks_b = [], []
        for i, r in enumerate(self.robots):
            A, b = self.lift_rows(i, r.workspace.A, r.workspace.b)
            blocks_A.append(A)
            blocks_b.append(b)
        return np.vstack(blocks_A), np.concatenate(blocks_b)

    def sample_free(self, rng, tries=1000):
        lo = np.concatenate([r.workspace.bounding_box()[0] for r in self.robots])
        hi = np.concatenate([r.workspace.bounding_box()[1] for r in self.robots])
        for _ in range(tries):
            x = rng.uniform(lo, hi)
            if self.joint_free(x):
                return x
        raise NoFeasibleSeed("could not sample a free joint configuration")

    def to_json(self):
        return {
            "robots": [{"home": list(map(float, r.home)),
                        "radius": r.radius,
                        "workspace": r.workspace.to_json()} for r in self.robots],
            "obstacles": [o.to_json() for o in self.obstacles],
            "targets": {name: {"robot": t.selector, "region": t.region.to_json()}
                        for name, t in sorted(self.targets.items())},
            "clearance": self.clearance,
        }

    @staticmethod
    def from_json(obj):
        robots = []
        for r in obj["robots"]:
            ws = r.get("workspace", {"box": [[0, 0], [1, 1]]})
            robots.append(Robot(tuple(r["home"]), float(r.get("radius", 0.0)),
                                HPolytope.from_json(ws)))
        obstacles = [HPolytope.from_json(o) for o in obj.get("obstacles", [])]
        targets = {}
        for name, t in obj.get("targets", {}).items():
            region = HPolytope.from_json(t.get("region", t))
            targets[name] = Target(name, t.get("robot", "any"), region)
        return World(robots, obstacles, targets, obj.get("clearance", 0.0))


@dataclass
class LabeledConvexSet:
    """A collision-free convex set of joint configurations with the atomic
    propositions it certifies (label name -> certifying robot index)."""

    set: HPolytope
    labels: dict
    seed: np.ndarray
    kind: str = "connector"  # "label", "initial", or "connector"

    @property
    def label_names(self):
        return frozenset(self.labels)


def _dedupe_rows(A, b, decimals=9):
    seen = set()
    rows_A, rows_b = [], []
    for row, off in zip(A, b):
        key = (tuple(np.round(row, decimals)), round(float(off), decimals))
        if key not in seen:
            seen.add(key)
            rows_A.append(row)
            rows_b.append(off)
    return np.array(rows_A), np.array(rows_b)


def inflate_region(world, seed, extra_rows=None, cfg=None):
    """Grow a collision-free convex region around a seed configuration.

    Starts from the joint workspace box plus one separating hyperplane per
    robot pair anchored at the seed, then alternates between adding, for
    every (robot, obstacle) pair, the supporting hyperplane of the obstacle
    at the point nearest the current Chebyshev center, and recentering.
    """
    cfg = cfg or RegionConfig()
    seed = np.asarray(seed, float)
    if not world.joint_free(seed):
        raise SeedInCollision(f"seed {seed.tolist()} is in collision")

    A, b = world.joint_workspace()
    rows_A = [A]
    rows_b = [b]
    for i in range(world.n_robots):
        for j in range(i + 1, world.n_robots):
            pi, pj = world.robot_slice(seed, i), world.robot_slice(seed, j)
            d = world.required_separation(i, j)
            diff = pi - pj
            nrm = np.linalg.norm(diff)
            if nrm < 1e-12:
                raise SeedInCollision("coincident robots in seed")
            n = diff / nrm
            row = np.zeros(world.joint_dim)
            row[PLANAR_DIM * i:PLANAR_DIM * (i + 1)] = -n
            row[PLANAR_DIM * j:PLANAR_DIM * (j + 1)] = n
            rows_A.append(row[None, :])
            rows_b.append(np.array([-d]))
    if extra_rows is not None:
        rows_A.append(np.atleast_2d(extra_rows[0]))
        rows_b.append(np.atleast_1d(extra_rows[1]))

    # per-(robot, obstacle) seed clearance; every added plane must leave the
    # seed at least a quarter of it, so the region keeps a ball around the
    # seed and the chain construction is guaranteed to advance
    anchors = {}
    for i in range(world.n_robots):
        s_i = world.robot_slice(seed, i)
        for oi, o in enumerate(world._inflated[i]):
            p_seed = project(o, s_i)
            clear = float(np.linalg.norm(s_i - p_seed))
            if clear < 1e-9:
                raise SeedInCollision("seed touches an obstacle boundary")
            anchors[(i, oi)] = (p_seed, clear)

    for it in range(cfg.iris_iterations):
        if it == 0:
            center = seed  # grow outward from the seed before recentering
        else:
            A_all, b_all = _dedupe_rows(np.vstack(rows_A), np.concatenate(rows_b))
            center, _ = chebyshev_center(HPolytope(A_all, b_all, normalize=False))
        new_A, new_b = [], []
        for i in range(world.n_robots):
            c_i = world.robot_slice(center, i)
            s_i = world.robot_slice(seed, i)
            for oi, o in enumerate(world._inflated[i]):
                p_seed, clear = anchors[(i, oi)]
                floor = 0.25 * clear
                plane = None
                if not o.contains(c_i, tol=0.0):
                    p_star = project(o, c_i)
                    a = c_i - p_star
                    nrm = np.linalg.norm(a)
                    if nrm >= 1e-9:
                        a = a / nrm
                        if a @ s_i - a @ p_star >= floor:
                            plane = (a, p_star)
                if plane is None:
                    a = (s_i - p_seed) / clear
                    plane = (a, p_seed)
                a, p_star = plane
                row, off = world.lift_rows(i, -a[None, :], [-(a @ p_star)])
                new_A.append(row)
                new_b.append(off)
        if new_A:
            rows_A.extend(new_A)
            rows_b.extend(new_b)
        else:
            break

    A_all, b_all = _dedupe_rows(np.vstack(rows_A), np.concatenate(rows_b))
    region = HPolytope(A_all, b_all, normalize=False)
    region._interior = seed.copy()
    return region


def construct_labeled_set(world, ap, robot_idx, cfg=None):
    """Build a labeled convex set for one atomic proposition and one robot:
    the robot sits at the Chebyshev center of the target region, the other
    robots park at collision-free posts, and the inflated region is
    intersected with the lifted target constraints so that every contained
    configuration produces the label.
    """
    cfg = cfg or RegionConfig()
    target = world.targets[ap]
    if not target.allows(robot_idx):
        raise NoFeasibleSeed(f"target {ap} is not assigned to robot {robot_idx}")
    reachable = intersect(target.region, world.robots[robot_idx].workspace)
    if reachable is EMPTY:
        raise NoFeasibleSeed(f"target {ap} lies outside robot {robot_idx}'s workspace")
    seed_r, radius = chebyshev_center(reachable)
    if radius < 1e-9 or not world.robot_point_free(seed_r, robot_idx):
        raise NoFeasibleSeed(f"target {ap} is blocked for robot {robot_idx}")

    seed = _park_remaining(world, robot_idx, seed_r)
    extra = world.lift_rows(robot_idx, target.region.A, target.region.b)
    region = inflate_region(world, seed, extra_rows=extra, cfg=cfg)
    return LabeledConvexSet(region, {ap: robot_idx}, seed, kind="label")


def _park_remaining(world, pinned_idx, pinned_pos):
    """Place the unconstrained robots at collision-free posts (their homes,
    with a few fallbacks), keeping the pairwise separation to every robot
    already placed."""
    placed = {pinned_idx: np.asarray(pinned_pos, float)}
    for i in range(world.n_robots):
        if i == pinned_idx:
            continue
        candidates = [np.asarray(world.robots[i].home, float)]
        lo, hi = world.robots[i].workspace.bounding_box()
        inset = 0.05 * (hi - lo)
        candidates.append((lo + hi) / 2)
        candidates.extend([
            np.array([lo[0] + inset[0], lo[1] + inset[1]]),
            np.array([hi[0] - inset[0], lo[1] + inset[1]]),
            np.array([lo[0] + inset[0], hi[1] - inset[1]]),
            np.array([hi[0] - inset[0], hi[1] - inset[1]]),
        ])
        post = None
        for cand in candidates:
            if not world.robot_point_free(cand, i):
                continue
            ok = all(np.linalg.norm(cand - q) >= world.required_separation(i, j) - 1e-12
                     for j, q in placed.items())
            if ok:
                post = cand
                break
        if post is None:
            raise NoFeasibleSeed(f"no collision-free post for robot {i}")
        placed[i] = post
    return np.concatenate([placed[i] for i in range(world.n_robots)])


# ---------------------------------------------------------------------------
# RRT and region chaining


def _grid_disconnected(world, start, goal, h=0.01):
    """Fast per-robot flood-fill disconnection test on a conservative
    occupancy grid (obstacles inflated by half a cell). Passages narrower
    than about two cells may be misjudged as blocked, which only skips a
    connector chain; it never compromises soundness."""
    for i in range(world.n_robots):
        lo, hi = world.robots[i].workspace.bounding_box()
        nx = max(2, int(np.ceil((hi[0] - lo[0]) / h)) + 1)
        ny = max(2, int(np.ceil((hi[1] - lo[1]) / h)) + 1)
        xs = np.linspace(lo[0], hi[0], nx)
        ys = np.linspace(lo[1], hi[1], ny)
        free = np.ones((nx, ny), dtype=bool)
        pts = np.stack(np.meshgrid(xs, ys, indexing="ij"), axis=-1).reshape(-1, 2)
        for o in world._inflated[i]:
            inside = np.all(pts @ o.A.T - o.b <= 0.5 * h, axis=1)
            free &= ~inside.reshape(nx, ny)

        def cell(p):
            cx = int(np.clip(np.searchsorted(xs, p[0]) - 1, 0, nx - 1))
            cy = int(np.clip(np.searchsorted(ys, p[1]) - 1, 0, ny - 1))
            return cx, cy

        c0 = cell(world.robot_slice(start, i))
        c1 = cell(world.robot_slice(goal, i))
        free[c0] = free[c1] = True  # the endpoints are known to be free
        seen = {c0}
        stack = [c0]
        found = c0 == c1
        while stack and not found:
            x, y = stack.pop()
            for dx in (-1, 0, 1):
                for dy in (-1, 0, 1):
                    nxt = (x + dx, y + dy)
                    if nxt in seen or not (0 <= nxt[0] < nx and 0 <= nxt[1] < ny):
                        continue
                    if not free[nxt]:
                        continue
                    if nxt == c1:
                        found = True
                        break
                    seen.add(nxt)
                    stack.append(nxt)
                if found:
                    break
        if not found:
            return True
    return False


def rrt(world, start, goal, rng, cfg=None):
    """Goal-biased RRT in joint space followed by shortcut smoothing.

    Deterministic under a fixed generator. Returns the waypoint polyline;
    raises NotConnected when the iteration budget runs out.
    """
    cfg = cfg or RegionConfig()
    start = np.asarray(start, float)
    goal = np.asarray(goal, float)
    res = cfg.collision_resolution
    if not world.joint_free(start):
        raise SeedInCollision("RRT start in collision")
    if not world.joint_free(goal):
        raise SeedInCollision("RRT goal in collision")
    # keep a clearance from obstacles where the endpoints allow it
    margin = min(cfg.path_obstacle_margin,
                 0.5 * world.obstacle_clearance(start),
                 0.5 * world.obstacle_clearance(goal))
    if np.linalg.norm(goal - start) < 1e-12:
        return np.array([start])
    if world.segment_free(start, goal, res, obstacle_margin=margin):
        return _shortcut(world, np.array([start, goal]), rng, cfg, margin)
    if _grid_disconnected(world, start, goal):
        raise NotConnected("start and goal grid-disconnected for some robot")

    lo = np.concatenate([r.workspace.bounding_box()[0] for r in world.robots])
    hi = np.concatenate([r.workspace.bounding_box()[1] for r in world.robots])
    nodes = np.empty((cfg.rrt_max_iters + 2, world.joint_dim))
    nodes[0] = start
    parents = np.full(cfg.rrt_max_iters + 2, -1, dtype=int)
    count = 1

    for _ in range(cfg.rrt_max_iters):
        q_rand = goal if rng.random() < cfg.rrt_goal_bias else rng.uniform(lo, hi)
        d2 = np.sum((nodes[:count] - q_rand) ** 2, axis=1)
        near = int(np.argmin(d2))
        diff = q_rand - nodes[near]
        dist = np.linalg.norm(diff)
        if dist < 1e-12:
            continue
        q_new = q_rand if dist <= cfg.rrt_step else nodes[near] + diff * (cfg.rrt_step / dist)
        if not world.segment_free(nodes[near], q_new, res, obstacle_margin=margin):
            continue
        nodes[count] = q_new
        parents[count] = near
        count += 1
        if np.linalg.norm(q_new - goal) <= cfg.rrt_step and \
                world.segment_free(q_new, goal, res, obstacle_margin=margin):
            nodes[count] = goal
            parents[count] = count - 1
            count += 1
            idx = count - 1
            path = []
            while idx >= 0:
                path.append(nodes[idx])
                idx = parents[idx]
            path.reverse()
            return _shortcut(world, np.array(path), rng, cfg, margin)
    raise NotConnected(f"RRT failed after {cfg.rrt_max_iters} iterations")


def _shortcut(world, path, rng, cfg, margin=0.0):
    path = [np.array(p) for p in path]
    for _ in range(cfg.shortcut_attempts):
        if len(path) <= 2:
            break
        i = rng.integers(0, len(path) - 1)
        j = rng.integers(0, len(path) - 1)
        i, j = min(i, j), max(i, j)
        if j - i < 2:
            continue
        if world.segment_free(path[i], path[j], cfg.collision_resolution,
                              obstacle_margin=margin):
            path = path[:i + 1] + path[j:]
    return np.array(path)


def _segment_cover(region, p, q):
    """Parameter interval of [p, q] contained in the region, or None."""
    d = q - p
    Ad = region.A @ d
    slack = region.b - region.A @ p
    lo, hi = 0.0, 1.0
    for adk, sk in zip(Ad, slack):
        if adk > 1e-12:
            hi = min(hi, sk / adk)
        elif adk < -1e-12:
            lo = max(lo, sk / adk)
        elif sk < -EMPTINESS_TOL:
            return None
    if hi < lo - 1e-12:
        return None
    return max(lo, 0.0), min(hi, 1.0)


def _farthest_covered(regions, path, lengths):
    """Arc length of the farthest path point inside the union of regions,
    exact for polylines: per-segment containment intervals, then the latest
    right endpoint."""
    best = 0.0
    covered_any = False
    for k in range(len(path) - 1):
        p, q = path[k], path[k + 1]
        seg_len = lengths[k + 1] - lengths[k]
        for region in regions:
            iv = _segment_cover(region, p, q)
            if iv is None:
                continue
            covered_any = True
            best = max(best, lengths[k] + iv[1] * seg_len)
    if not covered_any:
        return None
    return best


def _point_at(path, lengths, s):
    s = min(max(s, 0.0), lengths[-1])
    k = int(np.searchsorted(lengths, s, side="right")) - 1
    k = min(max(k, 0), len(path) - 2)
    seg = lengths[k + 1] - lengths[k]
    t = 0.0 if seg < 1e-15 else (s - lengths[k]) / seg
    return (1 - t) * path[k] + t * path[k + 1]


def iris_rrt(world, s_i, s_j, rng, cfg=None):
    """Chain of collision-free convex regions connecting two configurations.

    An RRT path guides the chain: each new region is seeded at the farthest
    point of the path still covered by the union built so far, which keeps
    consecutive regions overlapping, and the loop stops once the goal lies
    inside the union.
    """
    cfg = cfg or RegionConfig()
    s_i = np.asarray(s_i, float)
    s_j = np.asarray(s_j, float)
    path = rrt(world, s_i, s_j, rng, cfg)
    regions = [inflate_region(world, s_i, cfg=cfg)]
    if any(r.contains(s_j) for r in regions):
        return regions
    if len(path) < 2:
        raise NotConnected("degenerate guide path")

    lengths = np.concatenate([[0.0], np.cumsum(
        np.linalg.norm(np.diff(path, axis=0), axis=1))])
    progress = -1.0
    stalls = 0
    while len(regions) < cfg.max_chain_regions:
        farthest = _farthest_covered(regions, path, lengths)
        if farthest is None:
            raise ProgressStall("guide path escapes every region")
        if farthest <= progress + cfg.progress_tol:
            stalls += 1
            if stalls > 3:
                raise ProgressStall(
                    f"chain stalled at arc length {progress:.4f} of {lengths[-1]:.4f}")
        else:
            stalls = 0
            progress = farthest
        placed = False
        # the exit point may touch an obstacle face; back off along the path
        for off_frac in (0.0, 0.01, 0.03, 0.08):
            s = farthest - off_frac * lengths[-1]
            if s < 0:
                continue
            seed = _point_at(path, lengths, s)
            if not world.joint_free(seed):
                continue
            try:
                regions.append(inflate_region(world, seed, cfg=cfg))
                placed = True
                break
            except SeedInCollision:
                continue
        if not placed:
            raise ProgressStall("no inflatable seed near the coverage boundary")
        if regions[-1].contains(s_j):
            return regions
    raise ProgressStall(f"chain exceeded {cfg.max_chain_regions} regions")
