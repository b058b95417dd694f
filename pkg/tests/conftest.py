import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from equipart.domain import BoxDomain, GridField, normalize_density

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", max_examples=200, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def density_1d(values, lower=0.0, upper=None):
    values = np.asarray(values, dtype=float)
    upper = float(len(values)) if upper is None else upper
    return normalize_density(GridField.on_box([lower], [upper], values))


def gaussian_2d(n, center, sigma, domain=None):
    domain = BoxDomain.unit(2) if domain is None else domain
    c = np.asarray(center, dtype=float)
    f = GridField.from_function(domain, [(n, n)] * len(domain.boxes),
                                lambda x: np.exp(-((x - c) ** 2).sum(axis=1) / (2 * sigma ** 2)))
    return normalize_density(f)


@pytest.fixture
def four_cell():
    """p = {0.64, 0.04, 0.16, 0.16} on four unit cells."""
    return density_1d([0.64, 0.04, 0.16, 0.16])
