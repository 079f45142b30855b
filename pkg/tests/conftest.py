import warnings

import numpy as np
import pytest

from folialab.manifold import build_model, build_target

SOURCES = [
    ("product-flat-torus", {}),
    ("warped-torus", {"eps": 0.3}),
    ("conformal-torus", {"eps": 0.2}),
]
TARGETS = [
    ("flat-torus", {}),
    ("sphere-stereo", {"C": 1.0}),
    ("hyperbolic-disk", {"C": -1.0}),
    ("conformal-torus", {"eps": 0.2}),
]


def observed_orders(residuals):
    r = np.asarray(residuals, dtype=float)
    return np.log2(r[:-1] / r[1:])


@pytest.fixture(autouse=True)
def _quiet_thess():
    # THess at non-harmonic maps warns by design; tests that care use pytest.warns
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message="THess evaluated")
        yield


@pytest.fixture
def flat32():
    return build_model("product-flat-torus", {}, 32)


@pytest.fixture
def warped32():
    return build_model("warped-torus", {"eps": 0.3}, 32)


@pytest.fixture
def flat_target():
    return build_target("flat-torus")


@pytest.fixture
def sphere():
    return build_target("sphere-stereo", {"C": 1.0})


@pytest.fixture
def disk():
    return build_target("hyperbolic-disk", {"C": -1.0})
