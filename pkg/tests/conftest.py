import pytest

from sspm.harness import synth_dataset


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    """Three classes of 12 images; small enough for quick end-to-end runs."""
    return synth_dataset(tmp_path_factory.mktemp("small"), classes=3, per_class=12, seed=1)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
