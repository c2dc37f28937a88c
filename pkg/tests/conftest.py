import numpy as np
import pytest

from cpeal.datastore import SynthSpec, gen_synthetic


@pytest.fixture
def small_ds():
    return gen_synthetic(SynthSpec(num_classes=4, dim=8, per_class=40, class_separation=6.0, seed=1))


@pytest.fixture
def separable_ds():
    return gen_synthetic(SynthSpec(num_classes=4, dim=8, per_class=30, class_separation=50.0,
                                   within_class_scale=0.1, seed=3))


def random_probs(rng, m, k, scale=2.0):
    z = scale * rng.standard_normal((m, k))
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)
