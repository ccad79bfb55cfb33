from pathlib import Path

import numpy as np
import pytest

from outage_mask import _kernels
from outage_mask.case import bundled_case_path, load_case, place_pmus
from outage_mask.dc import build_dc_model, build_jacobian

DATA = Path(__file__).with_name("data")
PMU39 = (4, 13, 18, 23, 24)


@pytest.fixture(scope="session")
def case39():
    return load_case(bundled_case_path("case39"))


@pytest.fixture(scope="session")
def model39(case39):
    return build_dc_model(case39)


@pytest.fixture(scope="session")
def pmu39(case39):
    return place_pmus(case39, PMU39)


@pytest.fixture(scope="session")
def H39(model39):
    return build_jacobian(model39)


@pytest.fixture
def data_dir():
    return DATA


@pytest.fixture(params=["numba", "numpy"])
def backend(request, monkeypatch):
    """Run a test once per kernel flavour."""
    if request.param == "numba" and not _kernels.HAVE_NUMBA:
        pytest.skip("numba unavailable")
    monkeypatch.setattr(_kernels, "USE_NUMBA", request.param == "numba")
    return request.param


def random_balanced(rng, n, slack):
    p = rng.normal(size=n)
    p[slack] -= p.sum()
    return p


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
