import random

import pytest

from framecalc import frame as frame_mod
from framecalc import liegroup, varcalc
from framecalc.symexpr import parse


@pytest.fixture(scope="session")
def specs():
    """Validated catalog entries, loaded once."""
    cache = {}

    def get(name):
        if name not in cache:
            cache[name] = liegroup.catalog(name)
        return cache[name]

    return get


@pytest.fixture(scope="session")
def frames(specs):
    cache = {}

    def get(name, verify=False):
        key = (name, verify)
        if key not in cache:
            cache[key] = frame_mod.solve_frame(specs(name), verify=verify,
                                               rng=random.Random(1234))
        return cache[key]

    return get


@pytest.fixture(scope="session")
def laws_of(frames):
    """noether_laws for (entry, lagrangian text), derived once per pair."""
    cache = {}

    def get(name, ltext, syzygy=False, verify=True):
        key = (name, ltext, syzygy)
        if key not in cache:
            f = frames(name)
            L = varcalc.make_lagrangian(
                f, parse(ltext, f.spec.registry), syzygy_constraint=syzygy)
            cache[key] = varcalc.noether_laws(L, f, verify=verify,
                                              rng=random.Random(99))
        return cache[key]

    return get


@pytest.fixture(scope="session")
def contexts(frames):
    cache = {}

    def get(name, ltext, syzygy=False):
        key = (name, ltext, syzygy)
        if key not in cache:
            f = frames(name)
            L = varcalc.make_lagrangian(
                f, parse(ltext, f.spec.registry), syzygy_constraint=syzygy)
            cache[key] = (L, varcalc._context(f, L))
        return cache[key]

    return get


@pytest.fixture()
def rng():
    return random.Random(42)
