import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from sfsi.params import SchemeParams
from sfsi.spectral import DensityBasis, FluidBasis, Grid, StructureBasis

settings.register_profile("sfsi", deadline=None, max_examples=25,
                          suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture])
settings.load_profile("sfsi")


@pytest.fixture(scope="session")
def small_params():
    """A fast configuration: coarse grid, few modes, short horizon."""
    return SchemeParams(grid_nx=16, grid_nz=24, n_st=6, n_f_lateral=5, n_f_vertical=5, T_final=0.02, K=4)


@pytest.fixture(scope="session")
def small_grid():
    return Grid(2, 16, 24, 4.0)


@pytest.fixture(scope="session")
def small_bases(small_grid):
    return StructureBasis(small_grid, 6), FluidBasis(small_grid, 5, 5), DensityBasis(small_grid)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
