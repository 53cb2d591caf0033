import numpy as np
import pytest

from vislens.volume import PhantomSpec, VolumeGrid, default_phantom_spec, generate_phantom


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240817)


@pytest.fixture(scope="session")
def default_phantom():
    return generate_phantom(default_phantom_spec())


@pytest.fixture(scope="session")
def small_phantom():
    """Same layered structure at 64x32x32 for fast render tests."""
    spec = PhantomSpec(dims=(64, 32, 32), band_voxels=2.0)
    return generate_phantom(spec)


def linear_grid(n=8, spacing=(1.0, 1.0, 1.0), origin=(0.0, 0.0, 0.0)):
    """f(x, y, z) = x / (n-1), sampled on an n^3 lattice."""
    xs = np.arange(n) / (n - 1)
    values = np.broadcast_to(xs[:, None, None], (n, n, n)).copy()
    return VolumeGrid((n, n, n), spacing, origin, values)


def smooth_grid(n=32):
    """sin(pi x) sin(pi y) sin(pi z) on the unit cube, values in [0, 1]."""
    t = np.arange(n) / (n - 1)
    s = np.sin(np.pi * t)
    values = s[:, None, None] * s[None, :, None] * s[None, None, :]
    spacing = (1.0 / (n - 1),) * 3
    return VolumeGrid((n, n, n), spacing, (0.0, 0.0, 0.0), values)
