"""One check per acceptance criterion.

Each prints a PASS/FAIL line (visible with ``-s``); the same lines are
repeated in the terminal summary of every run.
"""

import pytest

from errorcalc import acceptance


@pytest.fixture
def report(acceptance_log):
    def record(res):
        print()
        print(res.line())
        acceptance_log.append(res.line())
        return res
    return record


def test_criterion_1_golden_value_4a(report):
    res = report(acceptance.criterion_1())
    assert res.passed, res.detail
    assert res.seconds < 60


def test_criterion_2_psi_variance_limit(report):
    res = report(acceptance.criterion_2())
    assert res.passed, res.detail


def test_criterion_3_strict_bound_and_split_information(report):
    res = report(acceptance.criterion_3())
    assert res.passed, res.detail


def test_criterion_4_mle_normality(report):
    res = report(acceptance.criterion_4())
    assert res.passed, res.detail


def test_criterion_5_median_risk(report):
    res = report(acceptance.criterion_5())
    assert res.passed, res.detail


def test_criterion_6_image_coherence(report):
    res = report(acceptance.criterion_6())
    assert res.passed, res.detail


def test_criterion_7_product_and_jeffreys_laws(report):
    res = report(acceptance.criterion_7())
    assert res.passed, res.detail


def test_criterion_8_property_suites(report):
    res = report(acceptance.criterion_8())
    assert res.passed, res.detail


@pytest.mark.slow
def test_selftest_exit_code(capsys):
    from errorcalc import cli
    assert cli.run(["selftest"]) == 0
