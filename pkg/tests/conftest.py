import os
from pathlib import Path

import pytest

from vir.patches import load_mnist_idx

ROOT = Path(__file__).resolve().parents[1]

# one line per acceptance criterion, filled by test_acceptance.py
ACCEPTANCE_LINES: list[str] = []


def mnist_dir() -> Path | None:
    candidates = []
    if os.environ.get("VIR_DATA_DIR"):
        candidates.append(Path(os.environ["VIR_DATA_DIR"]) / "mnist")
    candidates += [ROOT / "data" / "mnist", Path("/root/data/mnist")]
    for d in candidates:
        if (d / "train-images-idx3-ubyte").exists() or (d / "train-images-idx3-ubyte.gz").exists():
            return d
    return None


def _pick(d: Path, name: str) -> Path:
    p = d / name
    return p if p.exists() else d / f"{name}.gz"


_CACHE = {}


def load_mnist(split: str):
    d = mnist_dir()
    if d is None:
        pytest.skip("MNIST not found (set VIR_DATA_DIR)")
    if split not in _CACHE:
        prefix = "train" if split == "train" else "t10k"
        _CACHE[split] = load_mnist_idx(_pick(d, f"{prefix}-images-idx3-ubyte"), _pick(d, f"{prefix}-labels-idx1-ubyte"))
    return _CACHE[split]


@pytest.fixture(scope="session")
def mnist_train():
    return load_mnist("train")


@pytest.fixture(scope="session")
def mnist_test():
    return load_mnist("test")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
