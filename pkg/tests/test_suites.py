import math
from dataclasses import replace

import numpy as np
import pytest

import lipode.suites as suites
from lipode.errors import InvalidArgumentError
from lipode.suites import (
    SUITE_NAMES,
    SuiteResult,
    cover_suite,
    gradients_suite,
    isometry_suite,
    prop2_suite,
    prop5_suite,
    run_suite,
)


def test_suite_result_bookkeeping():
    res = SuiteResult("demo", samples=3, seed=0)
    res.record("a", True, 0.5)
    res.record("a", False, 1.5)
    res.record("b", True)
    assert res.violations == {"a": 1, "b": 0}
    assert res.worst == {"a": 1.5}
    assert not res.passed
    doc = res.to_dict()
    assert doc["passed"] is False and doc["suite"] == "demo"


def test_prop2_suite_passes():
    res = prop2_suite(samples=6, seed=1, steps=64, max_m=2, max_d=3)
    assert res.passed, res.violations
    assert res.worst["output_bound"] <= 1.0 + 1e-9


def test_prop5_suite_passes():
    res = prop5_suite(samples=20, seed=2, max_d=4, max_L=16)
    assert res.passed, res.violations
    assert res.worst["parameter_lipschitz"] <= 1.0 + 1e-9


def test_isometry_suite_passes():
    res = isometry_suite(samples=10, seed=3, max_d=3, max_L=12)
    assert res.passed, res.violations


def test_gradients_suite_covers_every_target():
    res = gradients_suite(samples=8, seed=4)
    assert res.passed, res.violations
    assert set(res.violations) == {"core", "input_proj", "output_proj", "penalty"}


def test_gradients_suite_checks_every_coordinate(monkeypatch):
    real_backward = suites.backward

    def off_in_last_entry(*args, **kwargs):
        grads = real_backward(*args, **kwargs)
        wrong = np.array(grads.input_proj)
        wrong[-1, -1] += 0.5 * np.abs(wrong).max()
        return replace(grads, input_proj=wrong)

    monkeypatch.setattr(suites, "backward", off_in_last_entry)
    res = gradients_suite(samples=4, seed=4)
    assert res.violations["input_proj"] == 1
    assert res.violations["core"] == 0
    assert not res.passed


def test_cover_suite_passes():
    res = cover_suite(samples=20, seed=5)
    assert res.passed, res.violations
    assert res.details["members"] > 0
    for entry in res.details["sizes"].values():
        assert entry["log_size"] <= entry["bound"]


def test_run_suite_dispatch():
    logs = []
    res = run_suite("cover", samples=5, seed=0, log=logs.append)
    assert res.suite == "cover" and res.samples == 5
    assert logs
    with pytest.raises(InvalidArgumentError):
        run_suite("nope")
    with pytest.raises(InvalidArgumentError):
        run_suite("prop5", samples=0)
    assert set(SUITE_NAMES) == {"prop2", "prop5", "isometry", "gradients", "cover"}


@pytest.mark.slow
def test_default_sample_counts_pass():
    for name in SUITE_NAMES:
        res = run_suite(name, seed=0)
        assert res.passed, (name, res.violations)
        assert not any(math.isinf(v) for v in res.worst.values())
