"""Shared solver caches so expensive meshes/systems are built once."""

import numpy as np
import pytest

from hdgeig.assembly import assemble_condensed
from hdgeig.eigensolve import solve_condensed_nonlinear, solve_linear_surrogate
from hdgeig.localsolve import MaterialSpec, SpaceConfig, TauSpec
from hdgeig.mesh import build_lshape_mesh, build_square_mesh
from hdgeig.study import StudyConfig, run_convergence_study


def _tau_from_key(key):
    if isinstance(key, (int, float)):
        return TauSpec.constant(float(key))
    return {
        "one": TauSpec.one(),
        "h": TauSpec.global_h(),
        "invh": TauSpec.inverse_global_h(),
        "zero": TauSpec.zero(),
    }[key]


@pytest.fixture(scope="session")
def meshes():
    cache = {}

    def get(domain, level):
        if (domain, level) not in cache:
            build = build_square_mesh if domain == "square" else build_lshape_mesh
            cache[(domain, level)] = build(level)
        return cache[(domain, level)]

    return get


@pytest.fixture(scope="session")
def systems(meshes):
    cache = {}

    def get(domain="square", level=1, k=1, tau="one", case="equal", mat=None):
        mat = mat or MaterialSpec.identity()
        key = (domain, level, k, tau, case, mat)
        if key not in cache:
            cache[key] = assemble_condensed(
                meshes(domain, level), SpaceConfig(k, case), _tau_from_key(tau), mat
            )
        return cache[key]

    return get


@pytest.fixture(scope="session")
def eigenpairs(systems):
    """Cache of (surrogates, sorted nonlinear pairs) per configuration."""
    cache = {}

    def get(domain="square", level=1, k=1, tau="one", case="equal", m=1):
        key = (domain, level, k, tau, case)
        have = cache.get(key)
        if have is None or len(have[0]) < m:
            sys = systems(domain, level, k, tau, case)
            surr = solve_linear_surrogate(sys, m)
            pairs = [solve_condensed_nonlinear(sys, s) for s in surr]
            order = np.argsort([p.value for p in pairs], kind="stable")
            cache[key] = (surr, [pairs[i] for i in order])
        surr, pairs = cache[key]
        return surr[:m], pairs[:m]

    return get


@pytest.fixture(scope="session")
def studies():
    cache = {}

    def get(**kwargs):
        config = StudyConfig(**kwargs)
        if config not in cache:
            cache[config] = run_convergence_study(config)
        return cache[config]

    return get
