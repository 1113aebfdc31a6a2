import logging

import numpy as np
import pytest

from core.models import RapidityGrid
from services.scatfn import load_spec

# keep setup_logging from binding a stream handler to a captured stderr
logging.getLogger("wedgelab").addHandler(logging.NullHandler())

FAMILIES = ("free", "ising", "sinh_gordon", "bound_state_pi4")
# families with a nontrivial S2 or Fermi statistics
INTERACTING = ("ising", "sinh_gordon", "bound_state_pi4")


@pytest.fixture
def rng():
    return np.random.default_rng(7)


@pytest.fixture
def grid4():
    return RapidityGrid.uniform(4, -2.0, 2.0)


@pytest.fixture
def grid6():
    return RapidityGrid.uniform(6, -2.0, 2.0)


@pytest.fixture
def free():
    return load_spec("preset:free")


@pytest.fixture
def ising():
    return load_spec("preset:ising")


@pytest.fixture
def sinh_gordon():
    return load_spec("preset:sinh_gordon")


@pytest.fixture
def bound_state():
    return load_spec("preset:bound_state_pi4")


@pytest.fixture(params=FAMILIES)
def family(request):
    return load_spec(f"preset:{request.param}")


@pytest.fixture(params=INTERACTING)
def interacting(request):
    return load_spec(f"preset:{request.param}")
