import numpy as np
import pytest

import labelfuse as lf
from labelfuse import kernels


def grid_noise(shape, seed, lo=0, hi=4096):
    """Random volume on the 1/4096 intensity grid (exact-arithmetic fixture)."""
    rng = np.random.default_rng(seed)
    return (rng.integers(lo, hi, size=shape).astype(np.float64) / 4096.0).astype(np.float32)


@pytest.fixture(scope="session", autouse=True)
def warm_kernels():
    kernels.warm_up()


@pytest.fixture(scope="session")
def noise_pair():
    return lf.Volume(grid_noise((12, 12, 12), seed=101)), lf.Volume(grid_noise((12, 12, 12), seed=202))


@pytest.fixture(scope="session")
def cohort6_32():
    """Small cohort for search-quality checks: 5 library templates + 1 subject."""
    spec = lf.PhantomSpec(
        dims=(32, 32, 32),
        n_subjects=6,
        semi_axes=(9.0, 7.0, 6.0),
        deform_amplitude=1.5,
        noise_std=0.12,
        seed=9,
    )
    return lf.generate_cohort(spec)


@pytest.fixture(scope="session")
def cohort3_identity():
    spec = lf.PhantomSpec(dims=(32, 32, 32), n_subjects=3, semi_axes=(9.0, 7.0, 6.0), seed=3)
    return lf.generate_cohort(spec)


@pytest.fixture(scope="session")
def cohort20():
    return lf.generate_cohort(lf.PhantomSpec())
