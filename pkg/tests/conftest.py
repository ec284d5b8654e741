import numpy as np
import pytest

from hymflow.geometry import build_torus_geometry


@pytest.fixture(scope="session")
def geom1():
    return build_torus_geometry(1, 32)


@pytest.fixture(scope="session")
def geom2():
    return build_torus_geometry(2, 16)


@pytest.fixture(scope="session")
def geom2_small():
    return build_torus_geometry(2, 8)


def band_limited(geom, seed, modes=2, terms=4, rank=None):
    """Random complex field with a few low Fourier modes."""
    rng = np.random.default_rng(seed)
    x = geom.coords()
    shape = geom.shape + (() if rank is None else (rank, rank))
    out = np.zeros(shape, complex)
    for _ in range(terms):
        k = rng.integers(-modes, modes + 1, size=geom.dim)
        phase = np.exp(1j * sum(2 * np.pi * k[m] * x[m] / geom.periods[m] for m in range(geom.dim)))
        c = rng.normal(size=shape[geom.dim:]) + 1j * rng.normal(size=shape[geom.dim:])
        out += phase.reshape(phase.shape + (1,) * (len(shape) - geom.dim)) * c
    return out
