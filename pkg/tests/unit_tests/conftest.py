import pytest
from typer.testing import CliRunner

from sieve_fgac.cli import CLIManager
from sieve_fgac.src.sieve.engine import Engine
from sieve_fgac.src.sieve.guard_generation import IndexCatalog
from sieve_fgac.src.sieve.policy import GroupDirectory
from sieve_fgac.src.sieve.store import PolicyStore

from .utils import FACULTY, WIFI_INDEXES, sample_policies, wifi_rows


@pytest.fixture
def engine():
    engine = Engine(IndexCatalog({"wifi": WIFI_INDEXES}))
    engine.load("wifi", wifi_rows())
    return engine


@pytest.fixture
def groups():
    return GroupDirectory.from_hierarchy({FACULTY: ["faculty"]}, {"faculty": ["staff"]})


@pytest.fixture
def store(groups):
    store = PolicyStore(groups=groups)
    for policy in sample_policies():
        store.insert_policy(policy)
    return store


@pytest.fixture
def home(tmp_path, monkeypatch):
    """Points ``~`` at a temporary directory so the config and store stay isolated."""
    monkeypatch.setenv("HOME", str(tmp_path))
    return tmp_path


@pytest.fixture
def exec_command(home):
    def _exec(*args, inputs: list[str] = None):
        cli_manager = CLIManager()
        # Capture stderr separately from stdout
        runner = CliRunner(mix_stderr=False)
        input_text = "\n".join(inputs) + "\n" if inputs else None
        return runner.invoke(
            cli_manager.app,
            [str(a) for a in args],
            input=input_text,
            env={"COLUMNS": "700"},
            catch_exceptions=False,
        )

    return _exec
