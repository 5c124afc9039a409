import pytest

from hivage.params import AgeGrid, ModelParams


@pytest.fixture
def params():
    return ModelParams()


@pytest.fixture
def coarse():
    """Coarse grid for fast runs; a_max still satisfies the truncation rule."""
    return AgeGrid(da=0.5, a_max=600.0, t_final=60.0)
