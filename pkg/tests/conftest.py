import pytest

from compound_sched import scenario

# filled by test_acceptance; echoed at the end of the run
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def library():
    return scenario.load_library()


@pytest.fixture(scope="session")
def lexicon():
    return scenario.load_lexicon()


@pytest.fixture(scope="session")
def video_plan(library, lexicon):
    return scenario.plan_job(scenario.load_job(), library, lexicon)
