import functools

import pytest


@pytest.fixture(scope="session")
def ts_cache():
    """Session cache for transition systems keyed by a builder tag, so test
    modules can share the expensive geometric construction."""
    from hltamp.transition_system import build_ts

    @functools.lru_cache(maxsize=None)
    def build(tag, world_factory, aps, s0, seed=0):
        world = world_factory()
        return world, build_ts(world, set(aps), list(s0), seed=seed)

    return build
