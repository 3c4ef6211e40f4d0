import numpy as np
import pytest

from sigsiam.features import SubjectRecord, generate_synthetic_cohort


def make_record(subject_id="X0", label="NC", gender="male", seed=0, **overrides):
    rng = np.random.default_rng(seed)
    a6 = rng.uniform(300, 2500, 70)
    t6 = rng.uniform(1.8, 3.2, 70)
    fields = dict(
        subject_id=subject_id,
        label=label,
        gender=gender,
        area_6m=a6,
        area_12m=a6 * 1.3,
        thickness_6m=t6,
        thickness_12m=t6 * 1.05,
        volume_6m=6.5e5,
        volume_12m=8.4e5,
    )
    fields.update(overrides)
    return SubjectRecord(**fields)


@pytest.fixture(scope="session")
def cohort():
    """A separable 30/127 cohort shared by the slower tests."""
    return generate_synthetic_cohort(30, 127, 3.0, seed=7)


@pytest.fixture(scope="session")
def small_cohort():
    return generate_synthetic_cohort(10, 20, 3.0, seed=11)


def pytest_terminal_summary(terminalreporter):
    from . import test_acceptance

    results = getattr(test_acceptance, "RESULTS", {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        ok, detail = results[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
