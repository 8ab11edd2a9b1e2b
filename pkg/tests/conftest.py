import pytest

ACCEPTANCE_LINES: dict[int, str] = {}


def record_criterion(number: int, passed: bool, detail: str) -> None:
    ACCEPTANCE_LINES[number] = f"criterion {number}: {'PASS' if passed else 'FAIL'} - {detail}"


@pytest.fixture(scope="session")
def mnist_dir(tmp_path_factory):
    """IDX files of the 5000-image MNIST sample bundled with mlxtend (4000 train, 1000 held out)."""
    pytest.importorskip("mlxtend")
    from mpcbandit.envs import prepare_mnist_subset

    return prepare_mnist_subset(tmp_path_factory.mktemp("mnist"))


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
