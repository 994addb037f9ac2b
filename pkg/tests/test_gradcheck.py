import pytest

from minehaul.errors import GradientCheckError
from minehaul.schemas.prediction import GradientCheckReport, GradientCheckResult
from minehaul.services.gradcheck_service import CASES, require_passing, run_gradcheck


@pytest.fixture(scope="module")
def report():
    return run_gradcheck(seed=0, n_probes=32)


def test_every_case_runs(report):
    assert [r.name for r in report.results] == list(CASES)
    assert all(r.probes > 0 for r in report.results)


@pytest.mark.parametrize("name", list(CASES))
def test_case_within_tolerance(report, name):
    result = next(r for r in report.results if r.name == name)
    assert result.max_rel_error < report.tolerance, result


def test_suite_passes(report):
    assert report.passed
    assert require_passing(report) is report


def test_selected_cases_only():
    report = run_gradcheck(cases=["dense", "softplus"], n_probes=8)
    assert [r.name for r in report.results] == ["dense", "softplus"]


def test_unknown_case():
    with pytest.raises(ValueError):
        run_gradcheck(cases=["attention"])


def test_failures_are_named():
    report = GradientCheckReport(
        tolerance=1e-4,
        results=[
            GradientCheckResult(name="dense", probes=8, max_rel_error=1e-7, passed=True),
            GradientCheckResult(name="mlp", probes=8, max_rel_error=3e-2, passed=False),
        ],
    )
    with pytest.raises(GradientCheckError) as info:
        require_passing(report)
    assert "mlp" in info.value.message
    assert info.value.exit_code == 4
    assert set(info.value.details) == {"mlp"}
