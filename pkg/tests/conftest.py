import os

import numpy as np
import pytest

os.environ.setdefault("DPW_FORGE_THREADS", str(min(8, os.cpu_count() or 1)))

from dpw_forge.loops import CircleGrid
from dpw_forge.monodromy import analyze
from dpw_forge.unitarize import unitarize

_cache = {}


def cached_report(family, **params):
    key = (family, tuple(sorted(params.items())))
    if key not in _cache:
        _cache[key] = analyze(family, params, grid=CircleGrid(512))
    return _cache[key]


def cached_unitarizer(family, **params):
    key = ("U", family, tuple(sorted(params.items())))
    if key not in _cache:
        _cache[key] = unitarize(cached_report(family, **params))
    return _cache[key]


@pytest.fixture(scope="session")
def genus2():
    return cached_report("genus_g", n=2, c=0.05)


@pytest.fixture(scope="session")
def genus4():
    return cached_report("genus_g", n=4, c=0.05)


@pytest.fixture(scope="session")
def torus():
    return cached_report("torus", c=0.001)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)
