"""Shared fixtures: the default well, pulse, backgrounds, and manifolds.

Everything heavy is cached at session scope; manifolds are memoized by their
parameter tuple so the acceptance tests can share builds.
"""

from functools import lru_cache

import numpy as np
import pytest

from fchpulse import (
    Grid,
    PulseManifold,
    SystemParams,
    default_well,
    solve_background,
    solve_homoclinic,
    stable_edge_floor,
)

TAU = -0.3


@pytest.fixture(scope="session")
def well():
    return default_well(TAU)


@pytest.fixture(scope="session")
def pulse(well):
    return solve_homoclinic(well)


@pytest.fixture(scope="session")
def backgrounds(well, pulse):
    return solve_background(well, pulse, 1), solve_background(well, pulse, 2)


@pytest.fixture(scope="session")
def edge_floor(well, pulse):
    ks, point = stable_edge_floor(well, pulse)
    return ks


@pytest.fixture(scope="session")
def manifold_factory(well, pulse, backgrounds):
    bg1, bg2 = backgrounds

    @lru_cache(maxsize=32)
    def make(length=160.0, n=3, ell=8.0, num_points=2048, excess=0.01,
             epsilon=0.05):
        params = SystemParams(
            epsilon=epsilon,
            domain_d=length * epsilon,
            n_pulses=n,
            total_mass=(n + excess) * pulse.mass_h,
            min_spacing=ell,
            alpha_minus=well.alpha_minus,
        )
        grid = Grid(length, num_points, h_max=0.4)
        return PulseManifold(well, pulse, bg1, bg2, params, grid)

    return make


@pytest.fixture(scope="session")
def desk_manifold(manifold_factory):
    """The default desk-scale setup: L = 160, n = 3, ell = 8, N = 2048."""
    return manifold_factory()


@pytest.fixture(scope="session")
def diag_manifold(manifold_factory):
    """Same parameters on the eigensolver grid (N = 1024)."""
    return manifold_factory(num_points=1024)


@pytest.fixture(scope="session")
def small_manifold(manifold_factory):
    """Two pulses in L = 16 with equispaced spacing 8: the dynamics testbed."""
    return manifold_factory(length=16.0, n=2, ell=5.0, num_points=256)


def moderate_config(manifold):
    """A generic interior configuration with gaps near the spacing floor."""
    return manifold.configuration([12.0, 22.0, 34.0])


def cluster_config(manifold, ell):
    """Left-clustered pulses with all gaps just above ell (matched geometry
    for tail-scaling ratio checks)."""
    p1 = 0.5 * ell + 0.2
    return manifold.configuration([p1, p1 + ell + 0.3, p1 + 2 * ell + 1.0])
