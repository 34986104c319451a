import os

import pytest

ACCEPTANCE_LINES: list[str] = []

MNIST_DIR = os.environ.get("DNS_MNIST_DIR", "/root/data/mnist")


def have_mnist() -> bool:
    return all(os.path.exists(os.path.join(MNIST_DIR, f)) for f in (
        "train-images-idx3-ubyte", "train-labels-idx1-ubyte",
        "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"))


class Verdict:
    """Records one acceptance line per criterion, then asserts or skips."""

    def __call__(self, criterion: str, ok: bool, detail: str = ""):
        ACCEPTANCE_LINES.append(f"[{'PASS' if ok else 'FAIL'}] {criterion}: {detail}")
        assert ok, f"{criterion}: {detail}"

    def skip(self, criterion: str, reason: str):
        ACCEPTANCE_LINES.append(f"[SKIP] {criterion}: {reason}")
        pytest.skip(reason)


@pytest.fixture
def verdict():
    return Verdict()


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
