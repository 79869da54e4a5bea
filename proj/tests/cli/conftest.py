import os
import subprocess
from pathlib import Path

import pytest


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: full desk-scale training run")


@pytest.fixture(scope="session")
def cli():
    path = os.environ["TRACEWARP_CLI"]

    def run(*args, check=True):
        proc = subprocess.run([path, *map(str, args)], capture_output=True, text=True)
        if check and proc.returncode != 0:
            raise AssertionError(f"{args[0]} exited {proc.returncode}:\n{proc.stdout}\n{proc.stderr}")
        return proc

    return run


@pytest.fixture(scope="session")
def fixtures(tmp_path_factory):
    out = tmp_path_factory.mktemp("fixtures")
    subprocess.run([os.environ["TRACEWARP_MAKE_FIXTURES"], str(out)], check=True)
    return out


@pytest.fixture(scope="session")
def configs():
    return Path(os.environ["TRACEWARP_CONFIG_DIR"])
