import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from supfpca.likelihood import prepare
from supfpca.model import FunctionalSample, ModelParams, make_bases

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_problem(rng, n_samples=6, m=5, q=4, l=5, p=4, r=2, sigma2=0.5, max_obs=8, sd=False,
                   min_obs=1):
    """Random curves, bases and parameters on ``[0, 1]^2``."""
    bases = make_bases(l, p, m, q, (0.0, 1.0), (0.0, 1.0))
    samples = []
    for n in range(n_samples):
        k = int(rng.integers(min_obs, max_obs + 1))
        t = np.sort(rng.uniform(0.0, 1.0, k))
        noise = rng.uniform(0.2, 2.0, k) if sd else None
        samples.append(FunctionalSample(n, t, rng.normal(0.0, 2.0, k), rng.uniform(0.0, 1.0), noise))
    params = ModelParams(rng.normal(size=l * p), rng.normal(size=(m * q, r)), np.log(sigma2))
    return samples, bases, params


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_problem(rng):
    samples, bases, params = random_problem(rng)
    return prepare(samples, bases), params
