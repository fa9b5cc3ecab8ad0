import pytest

from signals import TimeGrid
from solver import MediumParams, SpaceGrid


@pytest.fixture
def thin_medium() -> MediumParams:
    """Optical depth 2 x 2: resolved by a single substep at dt = 5e-3 us."""
    return MediumParams(d=2.0)


@pytest.fixture
def coarse_grid() -> SpaceGrid:
    return SpaceGrid(n_z=128)


@pytest.fixture
def centred_grid() -> TimeGrid:
    """[-16, 16] in steps of 1/32, symmetric about zero."""
    return TimeGrid(-16.0, 1.0 / 32.0, 1025)


