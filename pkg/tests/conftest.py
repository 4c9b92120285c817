import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=50,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def cliques(sizes, weight=1.0, dim=2, spread=10.0, seed=0):
    """Tight point clouds far apart: a kNN graph over them splits into cliques."""
    r = np.random.default_rng(seed)
    pts, labels = [], []
    for c, size in enumerate(sizes):
        center = np.array([spread * c] + [0.0] * (dim - 1))
        pts.append(center + 0.01 * r.standard_normal((size, dim)))
        labels += [c] * size
    return np.vstack(pts), np.array(labels)
