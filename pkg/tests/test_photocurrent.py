import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sdrsim.photocurrent import (
    SAMPLE_TIME,
    CurrentTrace,
    DetectorModel,
    TransientModel,
    analytic_extremum,
    apply_detector,
    extremum_time,
    observed_transient,
    population_changes,
    sample_at,
    sample_jittered,
    transient_from_state,
)

M = TransientModel()


def test_no_population_change_gives_flat_baseline():
    tr = transient_from_state(0.0, 0.0, M, 60e-6)
    assert np.all(tr.current == M.baseline)
    obs = observed_transient(0.0, 0.0, M, DetectorModel())
    np.testing.assert_allclose(obs.current, M.baseline, rtol=1e-14)


def test_singlet_only_is_single_exponential():
    tr = transient_from_state(0.2, 0.0, M, 60e-6, 601)
    want = M.baseline + M.coeff_singlet * 0.2 * np.exp(-tr.times / M.tau_singlet_relax)
    np.testing.assert_allclose(tr.current, want, rtol=1e-15)


def test_smaller_population_change_shrinks_transient_everywhere():
    det = DetectorModel()
    big = observed_transient(-0.1, 0.1, M, det)
    small = observed_transient(-0.01, 0.01, M, det)
    d_big = np.abs(big.current - M.baseline)[1:]
    d_small = np.abs(small.current - M.baseline)[1:]
    assert np.all(d_small < d_big)


def test_quenching_minimum_position():
    raw = transient_from_state(-0.1, 0.1, M, 60e-6, 60001)
    assert extremum_time(raw, M.baseline) == pytest.approx(analytic_extremum(M), abs=1e-9)
    obs = observed_transient(-0.1, 0.1, M, DetectorModel(), 60e-6, 6001)
    assert extremum_time(obs, M.baseline) == pytest.approx(SAMPLE_TIME, abs=0.1e-6)
    assert analytic_extremum(TransientModel(tau_singlet_relax=5e-6, tau_triplet_relax=5e-6)) == 5e-6


def test_detector_with_zero_rise_is_identity():
    tr = transient_from_state(-0.1, 0.1, M, 60e-6, 101)
    out = apply_detector(tr, DetectorModel(0.0))
    assert np.array_equal(out.current, tr.current)
    assert out.current is not tr.current


def test_detector_step_and_ramp_response():
    tau = 1e-6
    t = np.linspace(0, 10e-6, 37)
    step = apply_detector(CurrentTrace(t, np.ones_like(t)), DetectorModel(tau), y0=0.0)
    np.testing.assert_allclose(step.current, -np.expm1(-t / tau), atol=1e-9)
    ramp = apply_detector(CurrentTrace(t, t / tau), DetectorModel(tau), y0=0.0)
    np.testing.assert_allclose(ramp.current, t / tau + np.expm1(-t / tau), atol=1e-9)


def test_detector_dc_gain():
    t = np.linspace(0, 5e-6, 11)
    out = apply_detector(CurrentTrace(t, np.full_like(t, 3e-6)), DetectorModel(1e-6))
    np.testing.assert_allclose(out.current, 3e-6, rtol=1e-14)


def test_detector_shift_equivariance():
    t = np.linspace(0, 20e-6, 201)
    x = np.where(t >= 2e-6, np.exp(-(t - 2e-6) / 3e-6), 0.0)
    shifted = np.roll(x, 10)
    shifted[:10] = 0.0
    det = DetectorModel(1e-6)
    a = apply_detector(CurrentTrace(t, x), det).current
    b = apply_detector(CurrentTrace(t, shifted), det).current
    np.testing.assert_allclose(b[10:], a[:-10], atol=1e-15)


@settings(max_examples=40, deadline=None)
@given(st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1))
def test_observed_transient_is_linear(a, b, c, e):
    det = DetectorModel()
    m = TransientModel(baseline=0.0)
    lhs = observed_transient(a + c, b + e, m, det, n_points=201).current
    rhs = observed_transient(a, b, m, det, n_points=201).current + observed_transient(c, e, m, det, n_points=201).current
    np.testing.assert_allclose(lhs, rhs, atol=1e-24)


def test_sample_at():
    t = np.array([0.0, 1.0, 2.0])
    tr = CurrentTrace(t, np.array([1.0, 3.0, 2.0]))
    assert sample_at(tr, 1.0) == 3.0
    assert sample_at(tr, 1.5) == 2.5
    with pytest.raises(ValueError):
        sample_at(tr, 2.0 + 1e-9)
    with pytest.raises(ValueError):
        sample_at(tr, -1e-9)


def test_sample_jittered():
    tr = CurrentTrace(np.linspace(0, 1, 11), np.linspace(0, 1, 11))
    rng = np.random.default_rng(0)
    assert sample_jittered(tr, 0.5, DetectorModel(), rng) == 0.5
    vals = [sample_jittered(tr, 0.5, DetectorModel(sample_jitter=0.01), rng) for _ in range(2000)]
    assert np.mean(vals) == pytest.approx(0.5, abs=3 * 0.01 / math.sqrt(2000))
    assert np.std(vals) == pytest.approx(0.01, rel=0.1)


def test_population_changes():
    assert population_changes(np.array([0.2, 0.3, 0.25]), np.array([0.8, 0.7, 0.6])) == pytest.approx((0.05, -0.2))


def test_validation_and_csv(tmp_path):
    with pytest.raises(ValueError):
        TransientModel(tau_singlet_relax=0.0)
    with pytest.raises(ValueError):
        DetectorModel(-1.0)
    with pytest.raises(ValueError):
        CurrentTrace(np.array([0.0, 0.0]), np.array([1.0, 1.0]))
    with pytest.raises(ValueError):
        transient_from_state(0.1, 0.1, M, 0.0)
    tr = transient_from_state(0.1, -0.1, M, 1e-6, 3)
    path = tmp_path / "t.csv"
    tr.write_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "time_us,current_pA"
    assert float(lines[1].split(",")[1]) == pytest.approx(M.baseline * 1e12)
    with pytest.raises(ValueError):
        tr + CurrentTrace(np.array([0.0, 1.0, 2.0]), np.zeros(3))
