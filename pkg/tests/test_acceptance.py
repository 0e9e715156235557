"""Acceptance criteria 1-12, one test each; every test prints a PASS/FAIL line."""

import pytest

from diverse_pop import probes

RESULTS: list[str] = []
WS = (1, 2, 3)


def report(res: probes.ProbeResult):
    line = res.line()
    RESULTS.append(line)
    print(line)
    assert res.passed, line


@pytest.fixture(scope="module")
def runs():
    return probes.long_runs(10_000, WS, seeds=10, sample_steps=10_000_000)


@pytest.fixture(scope="module")
def recovery():
    return probes.adversarial_recovery()


def test_01_kernel_exactness():
    report(probes.kernel_exactness())


def test_02_engine_equivalence():
    report(probes.engine_equivalence())


def test_03_diversity(runs):
    report(probes.diversity(runs, WS))


def test_04_shade_split(runs):
    report(probes.shade_split(runs, WS))


def test_05_potential_decay(runs):
    report(probes.potential_decay(runs, WS))


def test_06_sustainability(runs, recovery):
    report(probes.sustainability(runs, recovery.details["sustainability"]))


def test_07_fairness():
    report(probes.fairness())


def test_08_stationary_oracle():
    report(probes.stationary_oracle())


def test_09_gamblers_ruin():
    report(probes.gamblers_ruin_probe())


def test_10_adversarial_recovery(recovery):
    report(recovery)


def test_11_derandomized():
    a = probes.derandomized_kernel()
    b = probes.derandomized_diversity()
    RESULTS.append(a.line())
    print(a.line())
    report(probes.ProbeResult("11 derandomized", a.passed and b.passed,
                              f"kernel {'ok' if a.passed else 'FAILED'}; {b.summary}",
                              seconds=a.seconds + b.seconds))


def test_12_performance():
    report(probes.performance())
