import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from fdpn.config import RunConfig  # noqa: E402
from fdpn.datamodel import Dataset, SyntheticSpec, generate_synthetic  # noqa: E402

TINY_SPEC = SyntheticSpec(num_videos=8, num_test=4, frame_count=64, anomaly_duration_range=(8, 24), seed=1)
TINY_CFG = RunConfig(B=4, T=4, R=4, epochs=3, snippet_steps=20, checkpoint_every=2)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory) -> Dataset:
    root = tmp_path_factory.mktemp("tiny")
    generate_synthetic(TINY_SPEC, root)
    return Dataset.open(root)


@pytest.fixture
def tiny_cfg() -> RunConfig:
    return TINY_CFG


ACCEPTANCE: list[str] = []


def record_criterion(name: str, passed: bool, detail: str) -> str:
    line = f"[{'PASS' if passed else 'FAIL'}] {name}: {detail}"
    ACCEPTANCE.append(line)
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
