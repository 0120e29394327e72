import pytest

from rdnn.utils._logger import setup_logging

# fixtures


@pytest.fixture(scope="session")
def log_dir(tmp_path_factory):
    yield tmp_path_factory.mktemp("logs")


@pytest.fixture(autouse=True)
def quiet_logging(log_dir):
    """Route logs to a scratch directory and rebind the console handler after each test."""
    setup_logging(str(log_dir), "WARNING", force=True)
    yield
    setup_logging(str(log_dir), "WARNING", force=True)
