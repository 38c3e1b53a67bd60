import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from adjrobust.data import ObservationTable

settings.register_profile(
    "default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


def random_table(seed, n=200, p=2, effect=1.0):
    """Linear confounded table with a logistic treatment."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, p))
    a = (rng.random(n) < 1 / (1 + np.exp(-x[:, 0]))).astype(float)
    y = effect * a + x @ np.linspace(1, 0.5, p) + rng.standard_normal(n)
    return ObservationTable(y, a, x, tuple(f"x{j + 1}" for j in range(p)))


@pytest.fixture
def table():
    return random_table(0)


def mild_mediator(n, seed):
    """x2 partly mediates the effect; the tilt needed to reconcile the sets is mild.

    x1 ~ N(0, 1); A ~ Ber(expit(x1 / 2)); x2 = A (0.2 + x1 / 2) + N(0, 1);
    y = A x1 + x2 + N(0, 1). S_1 = {x1} is valid with contrast 0.2 + 1.5 x1,
    S_2 = {x1, x2} gives x1, so g = 0.2 + x1 / 2, lambda* = -0.8 and the
    reweighted ATE is 0.2 + 1.5 * (-0.4) = -0.4.
    """
    rng = np.random.default_rng(seed)
    x1 = rng.standard_normal(n)
    a = (rng.random(n) < 1 / (1 + np.exp(-0.5 * x1))).astype(float)
    x2 = a * (0.2 + 0.5 * x1) + rng.standard_normal(n)
    y = a * x1 + x2 + rng.standard_normal(n)
    return ObservationTable(y, a, np.column_stack([x1, x2]), ("x1", "x2"))


MILD_MEDIATOR_TARGET = -0.4
