import pytest
from hypothesis import HealthCheck, settings

from landau_lab.landau_core import build_grid

settings.register_profile("lab", deadline=None, max_examples=25,
                          suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture])
settings.load_profile("lab")


@pytest.fixture(scope="session")
def grid12():
    """Calibrated grid carrying levels k <= 8 and guiding centres m <= 8."""
    return build_grid(12.0, 8.0, level=8, m_max=8)
