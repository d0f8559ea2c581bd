import numpy as np
import pytest

from hltamp.errors import NoFeasibleSeed, NotConnected
from hltamp.geometry import EMPTY, HPolytope, intersect
from hltamp.regions import (LabeledConvexSet, RegionConfig, Robot, Target,
                            World, construct_labeled_set, inflate_region,
                            iris_rrt, rrt)


def free_world(n=1, span=1.0, clearance=0.0, targets=None, obstacles=None):
    ws = HPolytope.box([0, 0], [span, span])
    homes = [(0.1 * span, 0.1 * span), (0.9 * span, 0.9 * span),
             (0.1 * span, 0.9 * span), (0.9 * span, 0.1 * span)]
    robots = [Robot(homes[i], 0.0, ws) for i in range(n)]
    return World(robots, obstacles or [], targets or {}, clearance)


def s_corridor_world():
    obstacles = [
        HPolytope.box([0.0, 0.30], [0.60, 0.45]),
        HPolytope.box([0.40, 0.60], [1.0, 0.75]),
    ]
    return free_world(obstacles=obstacles)


def test_labeled_set_free_world():
    big = HPolytope.box([0, 0], [6, 6])
    world = World([Robot((0.5, 0.5), 0.0, big)], [],
                  {"goal": Target("goal", "any", HPolytope.box([4, 4], [5, 5]))})
    ls = construct_labeled_set(world, "goal", 0)
    assert ls.labels == {"goal": 0}
    rng = np.random.default_rng(0)
    for x in ls.set.sample(rng, 200):
        assert world.targets["goal"].region.contains(x[:2], tol=1e-7)


def test_labeled_set_samples_satisfy_label():
    world = free_world(targets={"t": Target("t", "any", HPolytope.box([0.4, 0.4], [0.6, 0.6]))},
                       obstacles=[HPolytope.box([0.2, 0.0], [0.3, 0.5])])
    ls = construct_labeled_set(world, "t", 0)
    rng = np.random.default_rng(1)
    for x in ls.set.sample(rng, 1000):
        assert world.targets["t"].region.contains(x[:2], tol=1e-6)
        assert world.joint_free(x, tol=1e-6)


def test_labeled_set_blocked_target():
    world = free_world(
        targets={"t": Target("t", "any", HPolytope.box([0.45, 0.45], [0.55, 0.55]))},
        obstacles=[HPolytope.box([0.4, 0.4], [0.6, 0.6])])
    with pytest.raises(NoFeasibleSeed):
        construct_labeled_set(world, "t", 0)


def test_labeled_set_outside_workspace():
    ws_small = HPolytope.box([0, 0], [0.4, 1])
    world = World([Robot((0.1, 0.1), 0.0, ws_small)], [],
                  {"t": Target("t", "any", HPolytope.box([0.8, 0.8], [0.9, 0.9]))})
    with pytest.raises(NoFeasibleSeed):
        construct_labeled_set(world, "t", 0)


def test_inflate_free_world_is_full_box():
    world = free_world()
    region = inflate_region(world, [0.3, 0.7])
    for corner in ([0, 0], [1, 0], [0, 1], [1, 1]):
        assert region.contains(corner, tol=1e-9)


def test_inflate_respects_obstacle():
    world = free_world(obstacles=[HPolytope.box([0.0, 0.0], [0.3, 1.0])])
    region = inflate_region(world, [0.6, 0.5])
    assert region.contains([0.6, 0.5])
    rng = np.random.default_rng(2)
    for x in region.sample(rng, 1000):
        assert world.joint_free(x, tol=1e-6)
    # the seed keeps a positive margin from the separating boundary
    assert region.margin([0.6, 0.5]) > 0


def test_inflate_two_robot_separation():
    world = free_world(n=2, clearance=0.2)
    seed = np.array([0.25, 0.5, 0.75, 0.5])
    region = inflate_region(world, seed)
    rng = np.random.default_rng(3)
    for x in region.sample(rng, 1000):
        assert np.linalg.norm(x[:2] - x[2:]) >= 0.2 - 1e-7


def test_rrt_straight_corridor_near_optimal():
    world = free_world()
    rng = np.random.default_rng(4)
    path = rrt(world, [0.05, 0.5], [0.95, 0.5], rng)
    length = np.sum(np.linalg.norm(np.diff(path, axis=0), axis=1))
    assert length <= 1.05 * 0.9


def test_rrt_start_equals_goal():
    world = free_world()
    rng = np.random.default_rng(5)
    path = rrt(world, [0.5, 0.5], [0.5, 0.5], rng)
    assert path.shape == (1, 2)


def test_rrt_not_connected():
    world = free_world(obstacles=[HPolytope.box([0.4, -0.1], [0.6, 1.1])])
    rng = np.random.default_rng(6)
    cfg = RegionConfig(rrt_max_iters=1500)
    with pytest.raises(NotConnected):
        rrt(world, [0.1, 0.5], [0.9, 0.5], rng, cfg)


def test_iris_rrt_free_corridor_single_region():
    world = free_world()
    rng = np.random.default_rng(7)
    chain = iris_rrt(world, [0.1, 0.5], [0.9, 0.5], rng)
    assert len(chain) == 1
    assert chain[0].contains([0.9, 0.5])


def test_iris_rrt_s_corridor():
    world = s_corridor_world()
    rng = np.random.default_rng(8)
    start, goal = np.array([0.1, 0.1]), np.array([0.9, 0.9])
    chain = iris_rrt(world, start, goal, rng)
    assert len(chain) >= 3
    assert chain[0].contains(start)
    assert any(r.contains(goal) for r in chain)
    for a, b in zip(chain, chain[1:]):
        assert intersect(a, b) is not EMPTY
    rng2 = np.random.default_rng(9)
    for region in chain:
        for x in region.sample(rng2, 300):
            assert world.joint_free(x, tol=1e-6)


def test_iris_rrt_disconnected():
    world = free_world(obstacles=[HPolytope.box([0.4, -0.1], [0.6, 1.1])])
    rng = np.random.default_rng(10)
    cfg = RegionConfig(rrt_max_iters=1500)
    with pytest.raises(NotConnected):
        iris_rrt(world, [0.1, 0.5], [0.9, 0.5], rng, cfg)


def test_iris_rrt_deterministic():
    world = s_corridor_world()
    chains = []
    for _ in range(2):
        rng = np.random.default_rng(11)
        chains.append(iris_rrt(world, [0.1, 0.1], [0.9, 0.9], rng))
    assert len(chains[0]) == len(chains[1])
    for a, b in zip(*chains):
        assert np.allclose(a.A, b.A) and np.allclose(a.b, b.b)


def test_world_json_roundtrip():
    world = s_corridor_world()
    world.targets["t"] = Target("t", 0, HPolytope.box([0.1, 0.1], [0.2, 0.2]))
    again = World.from_json(world.to_json())
    assert again.n_robots == world.n_robots
    assert set(again.targets) == {"t"}
    assert again.targets["t"].selector == 0
    assert len(again.obstacles) == 2
