import pytest

from cnls_kam.lattice.main import classification_map
from cnls_kam.lattice.models import TangentialSet
from cnls_kam.polyvf.main import build_cubic_P0, linear_part


@pytest.fixture
def pair_set():
    """The two-site set {(1,0), (-1,0)} used throughout"""
    return TangentialSet.of([(1, 0), (-1, 0)])


@pytest.fixture
def pair_classes(pair_set):
    return classification_map(pair_set, 3)


@pytest.fixture(scope="module")
def cubic_d1_r3():
    return build_cubic_P0(1, 3)


@pytest.fixture(scope="module")
def lattice_field_d1_r3(cubic_d1_r3):
    return linear_part(1, 3) + cubic_d1_r3


@pytest.fixture
def no_ledger(monkeypatch):
    monkeypatch.setenv("LEDGER_DISABLED", "true")
