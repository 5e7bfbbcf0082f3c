import pytest

from swintextunet.autodiff import tape


@pytest.fixture(autouse=True)
def clean_tape():
    tape().clear()
    yield
    tape().clear()
