import pytest

from fractalcover.measure import ball_measure, make_measure

# Acceptance results collected by test_acceptance.record(), echoed at the end of the run.
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for line in ACCEPTANCE:
        terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def balls():
    return ball_measure(2, closed=True)


@pytest.fixture(scope="session")
def snowflakes():
    return make_measure("snowflake", 2)


@pytest.fixture(scope="session")
def sieve():
    return make_measure("sieve", 2, n_max=12)


@pytest.fixture(scope="session")
def rational():
    return make_measure("rational", 2, k_max=20)


@pytest.fixture(scope="session")
def sieve_extracond(sieve):
    from fractalcover.measure import extracond_trend
    return extracond_trend(sieve, 12)
