import pytest

from fisheyehdk.harness.config import ExperimentConfig

TINY = {
    "seed": 0,
    "dataset": {"n_train": 4, "n_val": 2, "size": 16, "num_classes": 3, "f": 12.0, "seed": 7},
    "model": {"mode": "hdk", "channels": [4, 4], "deformable_layers": [0], "m": 1},
    "optim": {"epochs": 2, "batch_size": 2, "lr_encoder": 0.01, "lr_decoder": 0.05},
    "compare": {"modes": ["none", "hdk"], "seeds": [0, 1]},
}


@pytest.fixture
def tiny_config(tmp_path):
    cfg = ExperimentConfig.from_dict(TINY)
    cfg.out = str(tmp_path / "run")
    return cfg.validate()


_ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = []


@pytest.fixture
def criterion(request):
    """Recorder for one acceptance criterion: ``criterion(number, passed, detail)``.

    A test that errors before recording is reported as failed.
    """
    lines = request.config.stash[_ACCEPTANCE]
    seen = []

    def record(number, passed, detail):
        line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        seen.append(line)
        lines.append(line)
        print(line)
        return passed

    yield record
    if not seen:
        lines.append(f"{request.node.name}: FAIL  (no result recorded)")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
