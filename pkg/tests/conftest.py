import os
import shutil
import tempfile

import pytest

from reedsbench.logstore import SyntheticConfig, write_log


@pytest.fixture(scope="session", autouse=True)
def scratch():
    """Keep shared-memory regions of the test run in one disposable directory."""
    base = "/dev/shm" if os.path.isdir("/dev/shm") else None
    path = tempfile.mkdtemp(prefix="reedsb-test-", dir=base)
    old = os.environ.get("REEDSB_TMP")
    os.environ["REEDSB_TMP"] = path
    yield path
    if old is None:
        os.environ.pop("REEDSB_TMP", None)
    else:
        os.environ["REEDSB_TMP"] = old
    shutil.rmtree(path, ignore_errors=True)


@pytest.fixture(scope="session")
def full_log(tmp_path_factory):
    """One second of native-resolution mono camera with ground truth."""
    path = tmp_path_factory.mktemp("logs") / "full.rlog"
    write_log(SyntheticConfig(seed=7, duration_s=1.0), path)
    return str(path)


def pytest_configure(config):
    config.acceptance_lines = []


def pytest_terminal_summary(terminalreporter, config):
    lines = getattr(config, "acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
