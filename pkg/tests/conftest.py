import pytest

from experiments import DiscourseRuns, PrefixPipeline


@pytest.fixture(scope="session")
def discourse_runs():
    return DiscourseRuns()


@pytest.fixture(scope="session")
def prefix_pipeline():
    return PrefixPipeline.build(seed=0)


def pytest_terminal_summary(terminalreporter):
    from experiments import ACCEPTANCE
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
