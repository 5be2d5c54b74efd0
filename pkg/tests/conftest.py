import numpy as np
import pytest

from anosovlab.torus import MapSpec, ShearTerm, cat_map, perturbed_cat_map


@pytest.fixture
def cat() -> MapSpec:
    return cat_map()


@pytest.fixture
def pert() -> MapSpec:
    return perturbed_cat_map(0.05)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


def random_spec(rng: np.random.Generator, eps: float = 0.05) -> MapSpec:
    """A random hyperbolic SL(2, Z) matrix with two random shears."""
    choices = [((2, 1), (1, 1)), ((1, 1), (1, 2)), ((3, 1), (2, 1)), ((2, 3), (1, 2)), ((3, 2), (4, 3))]
    lin = choices[rng.integers(len(choices))]
    shears = []
    for src, tgt in ((0, 1), (1, 0)):
        freq = int(rng.integers(1, 3))
        shears.append(ShearTerm(src, tgt, eps * float(rng.uniform(0.2, 1.0)),
                                ((freq, float(rng.uniform(-1, 1)), 0.0),)))
    return MapSpec(lin, tuple(shears))
