import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile('default', deadline=None, max_examples=25,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile('default')


def random_knots(rng, p, n_el, repeat=False):
    """Open knot vector on [0, 1] with random interior breaks."""
    widths = rng.uniform(0.5, 1.5, n_el)          # element size ratio at most 3
    inner = np.cumsum(widths)[:-1] / widths.sum()
    if repeat and inner.size:
        k = rng.integers(inner.size)
        inner = np.sort(np.r_[inner, [inner[k]] * int(rng.integers(1, p))])
    return np.r_[[0.0] * (p + 1), inner, [1.0] * (p + 1)]


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def square_model(n_elements=2, side=1.0, bc='clamped'):
    """Single affine patch on [0, side]^2."""
    from dualmortar.model import parse_model
    s = side
    return parse_model("""
    model { name = sq }
    patch { id = 1; degree_u = 1; degree_v = 1; knots_u = 0 0 1 1; knots_v = 0 0 1 1
      control_points = 0 0, %r 0, 0 %r, %r %r; elements_u = %d; elements_v = %d }
    bc { type = %s }
    """ % (s, s, s, s, n_elements, n_elements, bc))
