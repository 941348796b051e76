import pytest

from pneuctrl.config import (
    default_load,
    default_maps,
    default_pid_gains,
    default_plant,
    default_smc_gains,
    default_supervisor,
)
from pneuctrl.plant import Mode
from pneuctrl.sysid import synthesize_protocol


@pytest.fixture(scope="session")
def params():
    return default_plant()


@pytest.fixture(scope="session")
def maps():
    return default_maps()


@pytest.fixture(scope="session")
def supervisor():
    return default_supervisor()


@pytest.fixture(scope="session")
def smc_gains():
    return default_smc_gains()


@pytest.fixture(scope="session")
def pid_gains():
    return default_pid_gains()


@pytest.fixture(scope="session")
def load():
    return default_load()


@pytest.fixture(scope="session")
def protocol_traces(params, maps):
    """Noiseless identification protocol for both modes (expensive; shared)."""
    return synthesize_protocol(params, maps, modes=(Mode.INFLATION, Mode.DEFLATION))
